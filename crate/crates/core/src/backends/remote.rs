use std::sync::Arc;

use serde_json::{json, Value};

use super::{Answer, Backend, BackendError, BackendSpec, Query, Role};
use crate::clock::Clock;
use crate::http::{ConcurrencyLimit, HttpError, HttpTransport, RetryPolicy};

const DEFAULT_CONCURRENCY: usize = 4;

/// Minimal JSON-over-HTTP inference client.
///
/// Request: `POST endpoint` with `{"role", "model", "text", "hypotheses"?}`.
/// Response: `{"scores": {...}}`, `{"distribution": [neg, neu, pos]}`,
/// `{"vector": [...]}` or `{"p_objective": x}` depending on role.
pub struct RemoteBackend {
    endpoint: String,
    role: Role,
    model: String,
    token: Option<String>,
    dimension: Option<usize>,
    transport: Arc<dyn HttpTransport>,
    clock: Arc<dyn Clock>,
    retry: RetryPolicy,
    limit: ConcurrencyLimit,
}

impl RemoteBackend {
    pub fn from_spec(
        spec: &BackendSpec,
        transport: Arc<dyn HttpTransport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, BackendError> {
        let endpoint = spec
            .endpoint_url
            .clone()
            .ok_or_else(|| BackendError::Config(format!("remote {} backend needs endpoint_url", spec.role)))?;
        url::Url::parse(&endpoint)
            .map_err(|e| BackendError::Config(format!("bad endpoint_url {endpoint:?}: {e}")))?;
        let token = match &spec.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} (token for {endpoint}) is not set"))
            })?),
            None => None,
        };
        Ok(Self {
            endpoint,
            role: spec.role,
            model: spec.effective_model(),
            token,
            dimension: spec.dimension,
            transport,
            clock,
            retry: RetryPolicy::default(),
            limit: ConcurrencyLimit::new(spec.max_concurrency.unwrap_or(DEFAULT_CONCURRENCY)),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn request_body(&self, query: &Query) -> Value {
        let mut body = json!({
            "role": self.role.as_str(),
            "model": self.model,
            "text": query.text(),
        });
        if let Some(hypotheses) = query.hypotheses() {
            body["hypotheses"] = json!(hypotheses);
        }
        body
    }

    pub fn in_flight(&self) -> usize {
        self.limit.in_flight()
    }
}

impl Backend for RemoteBackend {
    fn role(&self) -> Role {
        self.role
    }

    fn model_identifier(&self) -> &str {
        &self.model
    }

    fn describe(&self) -> String {
        format!("remote {} backend at {}", self.role, self.endpoint)
    }

    fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    fn infer(&self, query: &Query) -> Result<Answer, BackendError> {
        if query.role() != self.role {
            return Err(BackendError::WrongRole { expected: query.role(), actual: self.role });
        }
        let body = self.request_body(query);
        let (result, attempts) = self.retry.run(self.clock.as_ref(), |_| {
            let _permit = self.limit.acquire();
            self.transport.post_json(&self.endpoint, self.token.as_deref(), &body)
        });
        let value = result.map_err(|e| match e {
            HttpError::Transport(message) => BackendError::Transport { endpoint: self.endpoint.clone(), attempts, message },
            HttpError::Status { status, body } => BackendError::Http { endpoint: self.endpoint.clone(), status, body },
            HttpError::Decode(message) => BackendError::Malformed { source_name: self.endpoint.clone(), message },
        })?;
        Answer::from_json(self.role, value)
            .map_err(|message| BackendError::Malformed { source_name: self.endpoint.clone(), message })
    }
}
