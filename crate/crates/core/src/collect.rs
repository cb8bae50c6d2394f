//! Response collection from chat-completion endpoints.
//!
//! Each provider gets a fixed pool of `max_concurrency` workers. Every HTTP
//! attempt, retries included, first takes a slot from an interval scheduler
//! spaced `60 / requests_per_minute` seconds apart. Finished records pass
//! through one writer in prompt order.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::corpus::{detect_refusal, read_responses, ApiStatus, CorpusError, PromptRecord, Refusal, RefusalRules, ResponseRecord};
use crate::http::{HttpError, HttpTransport, RetryPolicy, UreqTransport};

fn default_concurrency() -> usize {
    4
}

fn default_rpm() -> u32 {
    60
}

fn default_timeout() -> f64 {
    60.0
}

fn default_chat_path() -> String {
    "/v1/chat/completions".into()
}

fn default_content_pointer() -> String {
    "/choices/0/message/content".into()
}

fn default_id_pointer() -> String {
    "/id".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub model_id: String,
    pub base_url: String,
    pub api_key_env: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub request_timeout: f64,
    #[serde(default = "default_chat_path")]
    pub chat_path: String,
    /// Name sent in the `model` field; defaults to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// JSON pointer to the reply text in the response body.
    #[serde(default = "default_content_pointer")]
    pub content_pointer: String,
    /// JSON pointer to the provider's request id, if any.
    #[serde(default = "default_id_pointer")]
    pub id_pointer: String,
}

impl ProviderConfig {
    pub fn new(model_id: impl Into<String>, base_url: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            base_url: base_url.into(),
            api_key_env: api_key_env.into(),
            max_concurrency: default_concurrency(),
            requests_per_minute: default_rpm(),
            request_timeout: default_timeout(),
            chat_path: default_chat_path(),
            model_name: None,
            content_pointer: default_content_pointer(),
            id_pointer: default_id_pointer(),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), self.chat_path.trim_start_matches('/'))
    }

    pub fn validate(&self) -> Result<(), CollectError> {
        let invalid = |message: String| Err(CollectError::InvalidConfig { model_id: self.model_id.clone(), message });
        if self.max_concurrency < 1 {
            return invalid("max_concurrency must be at least 1".into());
        }
        if self.requests_per_minute < 1 {
            return invalid("requests_per_minute must be at least 1".into());
        }
        if !(self.request_timeout.is_finite() && self.request_timeout > 0.0) {
            return invalid(format!("request_timeout must be positive, got {}", self.request_timeout));
        }
        if let Err(e) = url::Url::parse(&self.endpoint()) {
            return invalid(format!("bad URL {:?}: {e}", self.endpoint()));
        }
        Ok(())
    }

    /// Minimum spacing between dispatches.
    pub fn dispatch_interval(&self) -> Duration {
        Duration::from_secs_f64(60.0 / self.requests_per_minute.max(1) as f64)
    }
}

/// Sampling settings. Unset fields are left to the provider and omitted from
/// requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodingConfig {
    /// Every setting, with `null` marking a provider default.
    pub fn provenance(&self) -> Value {
        json!({
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "top_p": self.top_p,
            "seed": self.seed,
        })
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("provider {model_id}: API key variable {var} is not set")]
    MissingKey { model_id: String, var: String },
    #[error("provider {model_id}: {message}")]
    InvalidConfig { model_id: String, message: String },
    #[error("no prompts to collect")]
    NoPrompts,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl CollectError {
    pub fn is_config(&self) -> bool {
        matches!(self, CollectError::MissingKey { .. } | CollectError::InvalidConfig { .. } | CollectError::NoPrompts)
    }
}

/// Chat-completion body: one user message with the prompt text verbatim.
pub fn render_request(prompt: &PromptRecord, provider: &ProviderConfig, decoding: &DecodingConfig) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), json!(provider.model_name.as_deref().unwrap_or(&provider.model_id)));
    body.insert("messages".into(), json!([{ "role": "user", "content": prompt.text }]));
    if let Value::Object(settings) = serde_json::to_value(decoding).expect("decoding serializes") {
        body.extend(settings);
    }
    Value::Object(body)
}

/// Hands out dispatch slots at least `interval` apart.
#[derive(Debug)]
pub struct IntervalScheduler {
    interval: Duration,
    next: Mutex<Option<Duration>>,
}

impl IntervalScheduler {
    pub fn new(interval: Duration) -> Self {
        Self { interval, next: Mutex::new(None) }
    }

    /// Blocks until the caller's slot arrives and returns the slot time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        let slot = {
            let mut next = self.next.lock().unwrap();
            let now = clock.now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        clock.sleep_until(slot);
        slot
    }
}

/// Shared machinery for a collection run.
pub struct Collector {
    pub transport: Arc<dyn HttpTransport>,
    pub clock: Arc<dyn Clock>,
    pub retry: RetryPolicy,
    pub refusal_rules: RefusalRules,
    pub timestamp: Box<dyn Fn() -> DateTime<Utc> + Send + Sync>,
}

impl Collector {
    /// Live collector: `ureq` transport with the provider's timeout, system clock.
    pub fn live(provider: &ProviderConfig, refusal_rules: RefusalRules) -> Self {
        Self {
            transport: Arc::new(UreqTransport::new(Duration::from_secs_f64(provider.request_timeout))),
            clock: Arc::new(SystemClock::new()),
            retry: RetryPolicy::default(),
            refusal_rules,
            timestamp: Box::new(Utc::now),
        }
    }

    fn fetch(
        &self,
        prompt: &PromptRecord,
        provider: &ProviderConfig,
        decoding: &DecodingConfig,
        key: &str,
        scheduler: &IntervalScheduler,
    ) -> ResponseRecord {
        let endpoint = provider.endpoint();
        let body = render_request(prompt, provider, decoding);
        let (result, attempts) = self.retry.run(self.clock.as_ref(), |_| {
            scheduler.acquire(self.clock.as_ref());
            let reply = self.transport.post_json(&endpoint, Some(key), &body)?;
            let text = reply
                .pointer(&provider.content_pointer)
                .and_then(Value::as_str)
                .ok_or_else(|| HttpError::Decode(format!("no string at {}", provider.content_pointer)))?
                .to_string();
            let request_id = reply.pointer(&provider.id_pointer).cloned();
            Ok((text, request_id))
        });
        let mut provenance = Map::new();
        provenance.insert("endpoint".into(), json!(endpoint));
        provenance.insert("attempts".into(), json!(attempts));
        provenance.insert("decoding".into(), decoding.provenance());
        let (text, refusal) = match result {
            Ok((text, request_id)) => {
                if let Some(id) = request_id {
                    provenance.insert("request_id".into(), id);
                }
                let refusal = detect_refusal(&text, ApiStatus::Ok, &self.refusal_rules);
                (text, refusal)
            }
            Err(e) => {
                provenance.insert("error".into(), json!(e.to_string()));
                (String::new(), Refusal::ApiError)
            }
        };
        ResponseRecord {
            prompt_id: prompt.prompt_id.clone(),
            model_id: provider.model_id.clone(),
            text,
            refusal: Some(refusal),
            collected_at: (self.timestamp)(),
            provenance,
        }
    }

    /// Collects one response per prompt, passing each record to `sink` in
    /// prompt order as soon as all earlier prompts are done. Per-prompt
    /// failures become `api_error` records; only configuration problems and
    /// sink errors abort.
    pub fn collect_with<F>(
        &self,
        prompts: &[PromptRecord],
        provider: &ProviderConfig,
        decoding: &DecodingConfig,
        mut sink: F,
    ) -> Result<(), CollectError>
    where
        F: FnMut(ResponseRecord) -> Result<(), CollectError>,
    {
        provider.validate()?;
        let key = std::env::var(&provider.api_key_env).map_err(|_| CollectError::MissingKey {
            model_id: provider.model_id.clone(),
            var: provider.api_key_env.clone(),
        })?;
        if prompts.is_empty() {
            return Ok(());
        }
        let scheduler = IntervalScheduler::new(provider.dispatch_interval());
        let next = AtomicUsize::new(0);
        let workers = provider.max_concurrency.min(prompts.len());
        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::channel::<(usize, ResponseRecord)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, scheduler, key) = (&next, &scheduler, key.as_str());
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(prompt) = prompts.get(i) else { break };
                    let record = self.fetch(prompt, provider, decoding, key, scheduler);
                    if tx.send((i, record)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            let mut emitted = 0;
            for (i, record) in rx {
                pending.insert(i, record);
                while let Some(record) = pending.remove(&emitted) {
                    // On a sink failure, stop handing out work and drain.
                    if let Err(e) = sink(record) {
                        next.store(prompts.len(), Ordering::SeqCst);
                        return Err(e);
                    }
                    emitted += 1;
                }
            }
            Ok(())
        })
    }

    pub fn collect_responses(
        &self,
        prompts: &[PromptRecord],
        provider: &ProviderConfig,
        decoding: &DecodingConfig,
    ) -> Result<Vec<ResponseRecord>, CollectError> {
        if prompts.is_empty() {
            return Err(CollectError::NoPrompts);
        }
        let mut out = Vec::with_capacity(prompts.len());
        self.collect_with(prompts, provider, decoding, |r| {
            out.push(r);
            Ok(())
        })?;
        Ok(out)
    }

    /// Appends responses for prompts not yet present in `path` for this
    /// provider's model.
    pub fn collect_to_file(
        &self,
        prompts: &[PromptRecord],
        provider: &ProviderConfig,
        decoding: &DecodingConfig,
        path: &Path,
    ) -> Result<CollectOutcome, CollectError> {
        if prompts.is_empty() {
            return Err(CollectError::NoPrompts);
        }
        let done: HashSet<String> = if path.exists() {
            read_responses(path)?
                .into_iter()
                .filter(|r| r.model_id == provider.model_id)
                .map(|r| r.prompt_id)
                .collect()
        } else {
            HashSet::new()
        };
        let todo: Vec<PromptRecord> = prompts.iter().filter(|p| !done.contains(&p.prompt_id)).cloned().collect();
        let skipped = prompts.len() - todo.len();
        let io_err = |source| CollectError::Io { path: path.display().to_string(), source };
        // Validate before touching the file.
        provider.validate()?;
        if std::env::var(&provider.api_key_env).is_err() {
            return Err(CollectError::MissingKey { model_id: provider.model_id.clone(), var: provider.api_key_env.clone() });
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        let mut writer = BufWriter::new(file);
        let mut outcome = CollectOutcome { written: 0, skipped, api_errors: 0 };
        self.collect_with(&todo, provider, decoding, |record| {
            if record.refusal == Some(Refusal::ApiError) {
                outcome.api_errors += 1;
            }
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(writer, "{line}").and_then(|_| writer.flush()).map_err(io_err)?;
            outcome.written += 1;
            Ok(())
        })?;
        Ok(outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollectOutcome {
    pub written: usize,
    pub skipped: usize,
    pub api_errors: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::corpus::Category;

    fn prompt(id: &str, text: &str) -> PromptRecord {
        PromptRecord { prompt_id: id.into(), text: text.into(), category: Category::Subjective, region_tags: vec![] }
    }

    #[test]
    fn request_has_single_verbatim_user_message() {
        let provider = ProviderConfig::new("m", "https://api.example.com", "KEY");
        let body = render_request(&prompt("p1", "Explain X."), &provider, &DecodingConfig::default());
        assert_eq!(body, json!({"model": "m", "messages": [{"role": "user", "content": "Explain X."}]}));
    }

    #[test]
    fn temperature_only_when_configured() {
        let provider = ProviderConfig { model_name: Some("vendor-model".into()), ..ProviderConfig::new("m", "http://h", "K") };
        let decoding = DecodingConfig { temperature: Some(0.0), ..Default::default() };
        let body = render_request(&prompt("p1", "x"), &provider, &decoding);
        assert_eq!(body["temperature"], json!(0.0));
        assert_eq!(body["model"], json!("vendor-model"));
        assert!(body.get("max_tokens").is_none());
    }

    #[test]
    fn awkward_text_round_trips() {
        let text = "She said \"no\".\nThen:\t{\"x\": 1} \\ done \u{1F600}";
        let provider = ProviderConfig::new("m", "http://h", "K");
        let rendered = serde_json::to_string(&render_request(&prompt("p", text), &provider, &DecodingConfig::default())).unwrap();
        let parsed: Value = serde_json::from_str(&rendered).unwrap();
        assert_eq!(parsed["messages"][0]["content"].as_str().unwrap(), text);
        assert_eq!(parsed["messages"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn endpoint_joins_and_validates() {
        let p = ProviderConfig::new("m", "https://api.example.com/", "K");
        assert_eq!(p.endpoint(), "https://api.example.com/v1/chat/completions");
        assert!(p.validate().is_ok());
        assert!(ProviderConfig::new("m", "not a url", "K").validate().is_err());
        assert!(ProviderConfig { max_concurrency: 0, ..p.clone() }.validate().is_err());
        assert!(ProviderConfig { requests_per_minute: 0, ..p }.validate().is_err());
    }

    #[test]
    fn scheduler_spaces_slots() {
        let clock = VirtualClock::new();
        let s = IntervalScheduler::new(Duration::from_millis(500));
        let slots: Vec<Duration> = (0..4).map(|_| s.acquire(&clock)).collect();
        assert_eq!(slots, [0, 500, 1000, 1500].map(Duration::from_millis));
        clock.advance(Duration::from_secs(10));
        assert_eq!(s.acquire(&clock), Duration::from_millis(11_500));
    }

    #[test]
    fn provider_config_defaults_from_json() {
        let p: ProviderConfig =
            serde_json::from_value(json!({"model_id": "m", "base_url": "http://h", "api_key_env": "K"})).unwrap();
        assert_eq!(p, ProviderConfig::new("m", "http://h", "K"));
        assert_eq!(p.dispatch_interval(), Duration::from_secs(1));
    }
}
