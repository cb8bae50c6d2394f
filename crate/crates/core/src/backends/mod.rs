//! Classifier contracts consumed by the scoring pipeline.
//!
//! Four roles are served: zero-shot entailment over ideology labels
//! (partisanship), three-class sentiment, sentence embeddings (topicality),
//! and objective/subjective probability. Each role can be backed by a remote
//! JSON-over-HTTP host, a content-addressed replay cache, or the seeded
//! reference oracle in [`reference`].
//!
//! The typed functions in this module ([`entail`], [`sentiment_distribution`],
//! [`embed`], [`objectivity_probability`]) enforce the result invariants no
//! matter which implementation answered.

mod calibration;
pub mod reference;
mod remote;
mod replay;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::http::{HttpTransport, UreqTransport};
use crate::text::{canonicalize, first_words};

pub use calibration::{
    bundled_calibration_set, calibrate_partisanship, parse_calibration_set, CalibrationItem, CalibrationOutcome, CalibrationReport,
};
pub use reference::ReferenceBackend;
pub use remote::RemoteBackend;
pub use replay::{CacheEntry, RecordingBackend, ReplayBackend, ReplayCache};

/// Zero-shot hypotheses, verbatim.
pub const LABEL_LIBERALISM: &str = "Supports Liberalism";
pub const LABEL_CONSERVATISM: &str = "Supports Conservatism";
pub const LABEL_LIBERTARIANISM: &str = "Supports Libertarianism";
pub const LABEL_AUTHORITARIANISM: &str = "Supports Authoritarianism";

pub const IDEOLOGY_LABELS: [&str; 4] = [
    LABEL_LIBERALISM,
    LABEL_CONSERVATISM,
    LABEL_LIBERTARIANISM,
    LABEL_AUTHORITARIANISM,
];

/// Words kept from the front of a text before it is embedded.
pub const EMBEDDING_WORD_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Partisanship,
    Sentiment,
    Embedding,
    Subjectivity,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Partisanship, Role::Sentiment, Role::Embedding, Role::Subjectivity];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Partisanship => "partisanship",
            Role::Sentiment => "sentiment",
            Role::Embedding => "embedding",
            Role::Subjectivity => "subjectivity",
        }
    }

    /// Hosted model each role was designed around.
    pub fn default_model(self) -> &'static str {
        match self {
            Role::Partisanship => "MoritzLaurer/DeBERTa-v3-large-mnli-fever-anli-ling-wanli",
            Role::Sentiment => "cardiffnlp/twitter-roberta-base-sentiment-latest",
            Role::Embedding => "sentence-transformers/all-MiniLM-L6-v2",
            Role::Subjectivity => "GroNLP/mdebertav3-subjectivity-english",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| format!("unknown role {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Replay,
    Reference,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "replay" => Ok(BackendKind::Replay),
            "reference" => Ok(BackendKind::Reference),
            other => Err(format!("unknown backend kind {other:?}")),
        }
    }
}

/// Configuration for one role's backend.
///
/// A `remote` or `reference` backend that also names a `cache_path` records
/// every answer into that cache, so a later `replay` run reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_identifier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Environment variable holding the bearer token for `remote`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Expected embedding dimension; checked on every embedding answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_concurrency: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
}

impl BackendSpec {
    pub fn new(kind: BackendKind, role: Role) -> Self {
        Self {
            kind,
            role,
            endpoint_url: None,
            model_identifier: None,
            cache_path: None,
            seed: None,
            api_key_env: None,
            dimension: None,
            max_concurrency: None,
            timeout_secs: None,
        }
    }

    pub fn reference(role: Role, seed: u64) -> Self {
        Self { seed: Some(seed), ..Self::new(BackendKind::Reference, role) }
    }

    pub fn replay(role: Role, cache_path: impl Into<PathBuf>) -> Self {
        Self { cache_path: Some(cache_path.into()), ..Self::new(BackendKind::Replay, role) }
    }

    pub fn remote(role: Role, endpoint_url: impl Into<String>) -> Self {
        Self { endpoint_url: Some(endpoint_url.into()), ..Self::new(BackendKind::Remote, role) }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let missing = |field: &str| {
            Err(BackendError::Config(format!("{} backend for {} requires {field}", kind_name(self.kind), self.role)))
        };
        match self.kind {
            BackendKind::Remote if self.endpoint_url.is_none() => missing("endpoint_url"),
            BackendKind::Replay if self.cache_path.is_none() => missing("cache_path"),
            BackendKind::Reference if self.seed.is_none() => missing("seed"),
            _ => Ok(()),
        }
    }

    /// The identifier that participates in cache keys and remote requests.
    pub fn effective_model(&self) -> String {
        match (&self.model_identifier, self.kind) {
            (Some(m), _) => m.clone(),
            (None, BackendKind::Reference) => format!("reference/{}", self.role),
            (None, _) => self.role.default_model().to_string(),
        }
    }
}

fn kind_name(kind: BackendKind) -> &'static str {
    match kind {
        BackendKind::Remote => "remote",
        BackendKind::Replay => "replay",
        BackendKind::Reference => "reference",
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend serves role {actual}, but {expected} was requested")]
    WrongRole { expected: Role, actual: Role },
    #[error("transport failure at {endpoint} after {attempts} attempt(s): {message}")]
    Transport { endpoint: String, attempts: u32, message: String },
    #[error("{endpoint} answered HTTP {status}: {body}")]
    Http { endpoint: String, status: u16, body: String },
    #[error("malformed payload from {source_name}: {message}")]
    Malformed { source_name: String, message: String },
    #[error("replay cache miss for {role} key {key}")]
    CacheMiss { role: Role, key: String },
    #[error("cache storage at {path}: {message}")]
    Storage { path: PathBuf, message: String },
    #[error("embedding dimension {actual} does not match configured {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid backend result: {0}")]
    InvalidResult(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Failures caused by configuration rather than data or transport.
    pub fn is_config(&self) -> bool {
        matches!(self, BackendError::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentQuery {
    pub premise: String,
    pub hypotheses: Vec<String>,
}

impl EntailmentQuery {
    pub fn new(premise: impl Into<String>, hypotheses: &[&str]) -> Result<Self, BackendError> {
        let query = Self {
            premise: premise.into(),
            hypotheses: hypotheses.iter().map(|h| h.to_string()).collect(),
        };
        query.check()?;
        Ok(query)
    }

    fn check(&self) -> Result<(), BackendError> {
        if self.hypotheses.is_empty() {
            return Err(BackendError::InvalidInput("entailment query needs at least one hypothesis".into()));
        }
        let distinct: BTreeSet<_> = self.hypotheses.iter().collect();
        if distinct.len() != self.hypotheses.len() {
            return Err(BackendError::InvalidInput("entailment hypotheses must be distinct".into()));
        }
        Ok(())
    }
}

/// Independent per-hypothesis entailment probabilities; they need not sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentResult {
    pub per_label: BTreeMap<String, f64>,
}

impl EntailmentResult {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.per_label.get(label).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentDistribution {
    pub p_negative: f64,
    pub p_neutral: f64,
    pub p_positive: f64,
}

impl SentimentDistribution {
    pub const UNIFORM: SentimentDistribution = SentimentDistribution {
        p_negative: 1.0 / 3.0,
        p_neutral: 1.0 / 3.0,
        p_positive: 1.0 / 3.0,
    };

    pub fn new(p_negative: f64, p_neutral: f64, p_positive: f64) -> Result<Self, BackendError> {
        let parts = [p_negative, p_neutral, p_positive];
        if parts.iter().any(|p| !unit_interval(*p)) {
            return Err(BackendError::InvalidResult(format!("sentiment probabilities out of [0,1]: {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(BackendError::InvalidResult(format!("sentiment distribution sums to {total}")));
        }
        Ok(Self { p_negative, p_neutral, p_positive })
    }
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    components: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `raw` to unit length. Zero or non-finite vectors are rejected.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self, BackendError> {
        if raw.is_empty() {
            return Err(BackendError::InvalidResult("empty embedding".into()));
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(BackendError::InvalidResult(format!("embedding norm {norm} cannot be normalized")));
        }
        Ok(Self { components: raw.into_iter().map(|x| x / norm).collect() })
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn unit_interval(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

/// A single inference request, independent of transport.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Entail(EntailmentQuery),
    Sentiment(String),
    Embed(String),
    Objectivity(String),
}

impl Query {
    pub fn role(&self) -> Role {
        match self {
            Query::Entail(_) => Role::Partisanship,
            Query::Sentiment(_) => Role::Sentiment,
            Query::Embed(_) => Role::Embedding,
            Query::Objectivity(_) => Role::Subjectivity,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Query::Entail(q) => &q.premise,
            Query::Sentiment(t) | Query::Embed(t) | Query::Objectivity(t) => t,
        }
    }

    pub fn hypotheses(&self) -> Option<&[String]> {
        match self {
            Query::Entail(q) => Some(&q.hypotheses),
            _ => None,
        }
    }
}

/// Raw backend answer. The JSON shapes double as the remote response bodies
/// and the `result` field of replay cache files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Scores { scores: BTreeMap<String, f64> },
    Distribution { distribution: [f64; 3] },
    Vector { vector: Vec<f64> },
    Objective { p_objective: f64 },
}

impl Answer {
    /// Decodes the payload shape expected for `role`.
    pub fn from_json(role: Role, value: Value) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct Scores {
            scores: BTreeMap<String, f64>,
        }
        #[derive(Deserialize)]
        struct Distribution {
            distribution: [f64; 3],
        }
        #[derive(Deserialize)]
        struct Vector {
            vector: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct Objective {
            p_objective: f64,
        }
        let err = |e: serde_json::Error| e.to_string();
        Ok(match role {
            Role::Partisanship => Answer::Scores { scores: serde_json::from_value::<Scores>(value).map_err(err)?.scores },
            Role::Sentiment => Answer::Distribution {
                distribution: serde_json::from_value::<Distribution>(value).map_err(err)?.distribution,
            },
            Role::Embedding => Answer::Vector { vector: serde_json::from_value::<Vector>(value).map_err(err)?.vector },
            Role::Subjectivity => Answer::Objective {
                p_objective: serde_json::from_value::<Objective>(value).map_err(err)?.p_objective,
            },
        })
    }

    fn role(&self) -> Role {
        match self {
            Answer::Scores { .. } => Role::Partisanship,
            Answer::Distribution { .. } => Role::Sentiment,
            Answer::Vector { .. } => Role::Embedding,
            Answer::Objective { .. } => Role::Subjectivity,
        }
    }
}

pub trait Backend: Send + Sync {
    fn role(&self) -> Role;
    fn model_identifier(&self) -> &str;
    /// Human-readable origin used in error messages (endpoint, cache dir, ...).
    fn describe(&self) -> String;
    fn infer(&self, query: &Query) -> Result<Answer, BackendError>;

    /// Embedding dimension the backend promises, if any.
    fn dimension(&self) -> Option<usize> {
        None
    }
}

/// Content hash identifying a query for caching: SHA-256 over the role,
/// model identifier, hypotheses, and whitespace-canonicalized text.
pub fn cache_key(role: Role, model_identifier: &str, query: &Query) -> String {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        role: Role,
        model: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        hypotheses: Option<&'a [String]>,
        text: String,
    }
    let material = KeyMaterial {
        role,
        model: model_identifier,
        hypotheses: query.hypotheses(),
        text: canonicalize(query.text()),
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(bytes))
}

fn require_role(backend: &dyn Backend, expected: Role) -> Result<(), BackendError> {
    if backend.role() == expected {
        Ok(())
    } else {
        Err(BackendError::WrongRole { expected, actual: backend.role() })
    }
}

fn wrong_shape(backend: &dyn Backend, answer: &Answer) -> BackendError {
    BackendError::Malformed {
        source_name: backend.describe(),
        message: format!("expected a {} answer, got a {} answer", backend.role(), answer.role()),
    }
}

pub fn entail(backend: &dyn Backend, query: &EntailmentQuery) -> Result<EntailmentResult, BackendError> {
    require_role(backend, Role::Partisanship)?;
    query.check()?;
    let answer = backend.infer(&Query::Entail(query.clone()))?;
    let Answer::Scores { scores } = answer else {
        return Err(wrong_shape(backend, &answer));
    };
    let expected: BTreeSet<&str> = query.hypotheses.iter().map(String::as_str).collect();
    let got: BTreeSet<&str> = scores.keys().map(String::as_str).collect();
    if expected != got {
        return Err(BackendError::InvalidResult(format!(
            "entailment labels {got:?} do not match hypotheses {expected:?}"
        )));
    }
    if let Some((label, p)) = scores.iter().find(|(_, p)| !unit_interval(**p)) {
        return Err(BackendError::InvalidResult(format!("entailment probability {p} for {label:?} out of [0,1]")));
    }
    Ok(EntailmentResult { per_label: scores })
}

pub fn sentiment_distribution(backend: &dyn Backend, text: &str) -> Result<SentimentDistribution, BackendError> {
    require_role(backend, Role::Sentiment)?;
    let answer = backend.infer(&Query::Sentiment(text.to_string()))?;
    let Answer::Distribution { distribution: [neg, neu, pos] } = answer else {
        return Err(wrong_shape(backend, &answer));
    };
    SentimentDistribution::new(neg, neu, pos)
}

/// Embeds the first [`EMBEDDING_WORD_LIMIT`] words of `text`.
pub fn embed(backend: &dyn Backend, text: &str) -> Result<EmbeddingVector, BackendError> {
    require_role(backend, Role::Embedding)?;
    let truncated = first_words(text, EMBEDDING_WORD_LIMIT);
    let answer = backend.infer(&Query::Embed(truncated.to_string()))?;
    let Answer::Vector { vector } = answer else {
        return Err(wrong_shape(backend, &answer));
    };
    if let Some(expected) = backend.dimension() {
        if vector.len() != expected {
            return Err(BackendError::DimensionMismatch { expected, actual: vector.len() });
        }
    }
    EmbeddingVector::from_raw(vector)
}

pub fn objectivity_probability(backend: &dyn Backend, text: &str) -> Result<f64, BackendError> {
    require_role(backend, Role::Subjectivity)?;
    let answer = backend.infer(&Query::Objectivity(text.to_string()))?;
    let Answer::Objective { p_objective } = answer else {
        return Err(wrong_shape(backend, &answer));
    };
    if !unit_interval(p_objective) {
        return Err(BackendError::InvalidResult(format!("objectivity probability {p_objective} out of [0,1]")));
    }
    Ok(p_objective)
}

/// Builds the backend described by `spec` using real HTTP and wall-clock time.
pub fn open_backend(spec: &BackendSpec) -> Result<Arc<dyn Backend>, BackendError> {
    let timeout = Duration::from_secs_f64(spec.timeout_secs.unwrap_or(60.0));
    open_backend_with(spec, Arc::new(UreqTransport::new(timeout)), Arc::new(SystemClock::new()))
}

pub fn open_backend_with(
    spec: &BackendSpec,
    transport: Arc<dyn HttpTransport>,
    clock: Arc<dyn Clock>,
) -> Result<Arc<dyn Backend>, BackendError> {
    spec.validate()?;
    let inner: Arc<dyn Backend> = match spec.kind {
        BackendKind::Reference => Arc::new(ReferenceBackend::from_spec(spec)),
        BackendKind::Remote => Arc::new(RemoteBackend::from_spec(spec, transport, clock)?),
        BackendKind::Replay => {
            let cache = ReplayCache::open(spec.cache_path.clone().expect("validated"))?;
            return Ok(Arc::new(ReplayBackend::new(cache, spec.role, spec.effective_model(), spec.dimension)));
        }
    };
    match &spec.cache_path {
        Some(path) => Ok(Arc::new(RecordingBackend::new(inner, ReplayCache::open(path.clone())?))),
        None => Ok(inner),
    }
}

/// One backend per role.
#[derive(Clone)]
pub struct BackendSet {
    pub partisanship: Arc<dyn Backend>,
    pub sentiment: Arc<dyn Backend>,
    pub embedding: Arc<dyn Backend>,
    pub subjectivity: Arc<dyn Backend>,
}

impl fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendSet")
            .field("partisanship", &self.partisanship.describe())
            .field("sentiment", &self.sentiment.describe())
            .field("embedding", &self.embedding.describe())
            .field("subjectivity", &self.subjectivity.describe())
            .finish()
    }
}

impl BackendSet {
    /// Opens one backend per role. Every role must appear exactly once.
    pub fn open(specs: &[BackendSpec]) -> Result<Self, BackendError> {
        Self::open_with(specs, open_backend)
    }

    pub fn open_with(
        specs: &[BackendSpec],
        mut opener: impl FnMut(&BackendSpec) -> Result<Arc<dyn Backend>, BackendError>,
    ) -> Result<Self, BackendError> {
        let mut by_role: BTreeMap<Role, Arc<dyn Backend>> = BTreeMap::new();
        for spec in specs {
            if by_role.contains_key(&spec.role) {
                return Err(BackendError::Config(format!("role {} configured more than once", spec.role)));
            }
            by_role.insert(spec.role, opener(spec)?);
        }
        let mut take = |role: Role| {
            by_role
                .remove(&role)
                .ok_or_else(|| BackendError::Config(format!("no backend configured for role {role}")))
        };
        Ok(Self {
            partisanship: take(Role::Partisanship)?,
            sentiment: take(Role::Sentiment)?,
            embedding: take(Role::Embedding)?,
            subjectivity: take(Role::Subjectivity)?,
        })
    }

    pub fn reference(seed: u64) -> Self {
        let make = |role| -> Arc<dyn Backend> { Arc::new(ReferenceBackend::new(role, seed)) };
        Self {
            partisanship: make(Role::Partisanship),
            sentiment: make(Role::Sentiment),
            embedding: make(Role::Embedding),
            subjectivity: make(Role::Subjectivity),
        }
    }
}
