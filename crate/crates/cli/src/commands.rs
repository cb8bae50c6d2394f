//! Stage implementations. Each returns a [`Failure`] whose kind picks the
//! process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use compass_audit_core::aggregate::{build_bundle, file_stem, prompt_baseline, write_objectivity_csv, write_summary_csv, BaselineError, SummaryBundle};
use compass_audit_core::backends::{
    bundled_calibration_set, calibrate_partisanship, open_backend, parse_calibration_set, BackendError, BackendSet, Role,
};
use compass_audit_core::collect::{CollectError, Collector};
use compass_audit_core::config::{ConfigError, RunConfig};
use compass_audit_core::corpus::{load_corpus, validate_corpus, CorpusError};
use compass_audit_core::metrics::{score_corpus, ScoreRecord};
use compass_audit_core::report::write_report;

use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Data,
    Config,
    Backend,
}

impl FailureKind {
    pub fn code(self) -> u8 {
        match self {
            FailureKind::Data => 1,
            FailureKind::Config => 2,
            FailureKind::Backend => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

type Outcome = Result<(), Failure>;

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure { kind: FailureKind::Data, error: error.into() }
}

fn config_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure { kind: FailureKind::Config, error: error.into() }
}

fn backend_failure(error: BackendError) -> Failure {
    let kind = if error.is_config() { FailureKind::Config } else { FailureKind::Backend };
    Failure { kind, error: error.into() }
}

fn corpus_failure(error: CorpusError) -> Failure {
    match error {
        CorpusError::Unsupported(_) => config_error(error),
        other => data(other),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(&common.config).map_err(|e| match e {
        ConfigError::Io { .. } | ConfigError::Parse { .. } | ConfigError::Invalid(_) => config_error(e),
    })?;
    if let Some(w) = common.weights {
        config.weights = w;
    }
    for (role, kind) in &common.backends {
        config.override_backend(*role, *kind);
    }
    if let Some(p) = common.parallelism {
        config.parallelism = p;
    }
    config.validate().map_err(config_error)?;
    Ok(config)
}

fn write_file(path: &Path, content: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display())).map_err(data)?;
    }
    fs::write(path, content).with_context(|| format!("writing {}", path.display())).map_err(data)
}

pub fn collect(common: &Common, input: Option<PathBuf>, out: Option<PathBuf>, only: Option<String>) -> Outcome {
    let config = load_config(common)?;
    let prompts_path = input
        .or_else(|| config.prompts.clone())
        .ok_or_else(|| config_error(anyhow!("no prompts file given (--in or config prompts)")))?;
    let prompts = load_corpus(&prompts_path, config.prompts_format).map_err(corpus_failure)?.prompts;
    let out = out.unwrap_or_else(|| config.output_dir.join("responses.jsonl"));
    let providers: Vec<_> =
        config.providers.iter().filter(|p| only.as_deref().is_none_or(|m| p.model_id == m)).collect();
    if providers.is_empty() {
        return Err(config_error(anyhow!("no matching providers configured")));
    }
    // Check every provider before sending anything.
    for provider in &providers {
        provider.validate().map_err(config_error)?;
        if std::env::var(&provider.api_key_env).is_err() {
            return Err(config_error(anyhow!(
                "provider {}: API key variable {} is not set",
                provider.model_id,
                provider.api_key_env
            )));
        }
    }
    for provider in providers {
        let collector = Collector::live(provider, config.refusal.clone());
        let outcome = collector
            .collect_to_file(&prompts, provider, &config.decoding, &out)
            .map_err(|e: CollectError| if e.is_config() { config_error(e) } else { data(e) })?;
        println!(
            "{}: wrote {}, skipped {} already collected, {} api errors",
            provider.model_id, outcome.written, outcome.skipped, outcome.api_errors
        );
    }
    Ok(())
}

pub fn score(common: &Common, extra: &[PathBuf], out: Option<PathBuf>) -> Outcome {
    let config = load_config(common)?;
    config.require_all_roles().map_err(config_error)?;
    let mut corpus = config.load_corpus(extra).map_err(corpus_failure)?;
    let resolved = corpus.resolve_refusals(&config.refusal);
    let backends = BackendSet::open(&config.backends).map_err(backend_failure)?;
    let scores = score_corpus(&corpus, &backends, &config.weights, config.parallelism).map_err(|e| {
        let kind = if e.source.is_config() { FailureKind::Config } else { FailureKind::Backend };
        Failure { kind, error: e.into() }
    })?;
    let out = out.unwrap_or_else(|| config.output_dir.join("scores.jsonl"));
    let mut text = String::new();
    for record in &scores {
        text.push_str(&record.to_json_line());
        text.push('\n');
    }
    write_file(&out, &text)?;
    println!("scored {} responses ({} refusal labels inferred) -> {}", scores.len(), resolved, out.display());
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(data)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            ScoreRecord::from_json_line(l).map_err(|e| data(anyhow!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn aggregate(common: &Common, input: Option<PathBuf>, out: Option<PathBuf>) -> Outcome {
    let config = load_config(common)?;
    let scores_path = input.unwrap_or_else(|| config.output_dir.join("scores.jsonl"));
    let scores = read_scores(&scores_path)?;
    if scores.is_empty() {
        return Err(data(anyhow!("{} holds no scores", scores_path.display())));
    }
    let corpus = config.load_corpus(&[]).map_err(corpus_failure)?;
    let baseline = match config.backend_for(Role::Partisanship).filter(|_| config.baseline) {
        Some(spec) => {
            let backend = open_backend(spec).map_err(backend_failure)?;
            let pool = rayon_pool(config.parallelism)?;
            match pool.install(|| prompt_baseline(&corpus.prompts, backend.as_ref())) {
                Ok(b) => Some(b),
                Err(BaselineError::Backend { prompt_id, source }) => {
                    let kind = if source.is_config() { FailureKind::Config } else { FailureKind::Backend };
                    return Err(Failure { kind, error: anyhow!("baseline for prompt {prompt_id}: {source}") });
                }
                Err(BaselineError::Aggregate(e)) => return Err(data(e)),
            }
        }
        None => None,
    };
    let bundle = build_bundle(&corpus, &scores, config.weights, baseline).map_err(data)?;
    let out = out.unwrap_or_else(|| config.output_dir.join("summaries.json"));
    write_file(&out, &(serde_json::to_string_pretty(&bundle).map_err(data)? + "\n"))?;
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut csv = Vec::new();
    write_summary_csv(&bundle.models, &mut csv).map_err(data)?;
    write_file(&dir.join("summary_stats.csv"), &String::from_utf8_lossy(&csv))?;
    let mut table = Vec::new();
    write_objectivity_csv(&bundle.objectivity_table, &mut table, |v| format!("{v:.6}")).map_err(data)?;
    write_file(&dir.join("objectivity_by_category.csv"), &String::from_utf8_lossy(&table))?;
    for model in &bundle.models {
        let path = dir.join("models").join(format!("{}.json", file_stem(&model.model_id)));
        write_file(&path, &(serde_json::to_string_pretty(model).map_err(data)? + "\n"))?;
    }
    println!("summarized {} models -> {}", bundle.models.len(), out.display());
    Ok(())
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| data(anyhow!(e)))
}

pub fn report(common: &Common, input: Option<PathBuf>, scores: Option<PathBuf>, out: Option<PathBuf>) -> Outcome {
    let config = load_config(common)?;
    let summaries = input.unwrap_or_else(|| config.output_dir.join("summaries.json"));
    let text = fs::read_to_string(&summaries).with_context(|| format!("reading {}", summaries.display())).map_err(data)?;
    let bundle: SummaryBundle =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", summaries.display())).map_err(data)?;
    let scores_path = scores.unwrap_or_else(|| config.output_dir.join("scores.jsonl"));
    let scores = read_scores(&scores_path)?;
    let out = out.unwrap_or_else(|| config.output_dir.join("report"));
    let written = write_report(&bundle, &scores, &out).map_err(data)?;
    println!("wrote {} report files -> {}", written.len(), out.display());
    Ok(())
}

pub fn validate(common: &Common, extra: &[PathBuf]) -> Outcome {
    let config = load_config(common)?;
    let mut ok = true;
    match config.backend_for(Role::Partisanship) {
        Some(spec) => {
            let set = match &config.calibration {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))
                        .map_err(config_error)?;
                    parse_calibration_set(&text)
                        .map_err(|e| config_error(anyhow!("{}: {e}", path.display())))?
                }
                None => bundled_calibration_set(),
            };
            let backend = open_backend(spec).map_err(backend_failure)?;
            let report = calibrate_partisanship(backend.as_ref(), &set).map_err(|e| match e {
                BackendError::InvalidInput(_) => config_error(e),
                other => backend_failure(other),
            })?;
            for o in &report.outcomes {
                println!(
                    "{} expected {:?} predicted {:?} p={:.4}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.expected,
                    o.predicted,
                    o.probability
                );
            }
            println!(
                "calibration: {}/{} argmax checks passed; lowest winning probability {:.4} ({})",
                report.passed,
                report.total,
                report.min_winning_probability,
                backend.describe()
            );
            ok &= report.all_passed();
        }
        None => println!("calibration: skipped (no partisanship backend configured)"),
    }
    if config.prompts.is_some() || config.import.is_some() {
        match config.load_corpus(extra) {
            Ok(corpus) => {
                let violations = validate_corpus(&corpus);
                println!(
                    "corpus: {} prompts, {} responses, {} models, {} violations",
                    corpus.prompts.len(),
                    corpus.responses.len(),
                    corpus.model_ids().len(),
                    violations.len()
                );
                ok &= violations.is_empty();
            }
            Err(CorpusError::Integrity(violations)) => {
                for v in &violations {
                    println!("violation: {v}");
                }
                println!("corpus: {} violations", violations.len());
                ok = false;
            }
            Err(e) => return Err(corpus_failure(e)),
        }
    }
    if ok {
        Ok(())
    } else {
        Err(data(anyhow!("validation failed")))
    }
}
