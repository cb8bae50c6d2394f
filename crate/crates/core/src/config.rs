//! JSON run configuration shared by every pipeline stage. Relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendKind, BackendSpec, Role};
use crate::collect::{DecodingConfig, ProviderConfig};
use crate::corpus::{import_table, load_corpus_files, Corpus, CorpusError, CorpusFormat, ImportMapping, RefusalRules};
use crate::metrics::Weights;

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_parallelism() -> usize {
    4
}

fn default_true() -> bool {
    true
}

/// A source table read through an [`ImportMapping`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportSource {
    pub path: PathBuf,
    #[serde(flatten)]
    pub mapping: ImportMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    #[serde(default)]
    pub prompts_format: CorpusFormat,
    #[serde(default)]
    pub responses: Vec<PathBuf>,
    /// Alternative to `prompts`/`responses`: one table holding both.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import: Option<ImportSource>,
    #[serde(default)]
    pub backends: Vec<BackendSpec>,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub refusal: RefusalRules,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Calibration set (JSONL); the bundled set is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    /// Score the prompts themselves as a compass baseline during `aggregate`.
    #[serde(default = "default_true")]
    pub baseline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = self.prompts.as_mut() {
            resolve(base, p);
        }
        self.responses.iter_mut().for_each(|p| resolve(base, p));
        if let Some(import) = self.import.as_mut() {
            resolve(base, &mut import.path);
        }
        for spec in &mut self.backends {
            if let Some(p) = spec.cache_path.as_mut() {
                resolve(base, p);
            }
        }
        resolve(base, &mut self.output_dir);
        if let Some(p) = self.calibration.as_mut() {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        if self.prompts.is_some() && self.import.is_some() {
            return Err(ConfigError::Invalid("set either prompts or import, not both".into()));
        }
        for spec in &self.backends {
            spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Switches `role` to `kind`, keeping the rest of any existing spec. A
    /// reference backend without a seed gets seed 0.
    pub fn override_backend(&mut self, role: Role, kind: BackendKind) {
        match self.backends.iter_mut().find(|s| s.role == role) {
            Some(spec) => spec.kind = kind,
            None => self.backends.push(BackendSpec::new(kind, role)),
        }
        let spec = self.backends.iter_mut().find(|s| s.role == role).expect("just inserted");
        if kind == BackendKind::Reference && spec.seed.is_none() {
            spec.seed = Some(0);
        }
    }

    pub fn backend_for(&self, role: Role) -> Option<&BackendSpec> {
        self.backends.iter().find(|s| s.role == role)
    }

    /// Checks that all four roles have a backend.
    pub fn require_all_roles(&self) -> Result<(), ConfigError> {
        let missing: Vec<&str> = Role::ALL.iter().filter(|r| self.backend_for(**r).is_none()).map(|r| r.as_str()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!("no backend configured for: {}", missing.join(", "))))
        }
    }

    /// Loads the corpus named by the config, with `extra_responses` appended
    /// to the configured response files.
    pub fn load_corpus(&self, extra_responses: &[PathBuf]) -> Result<Corpus, CorpusError> {
        if let Some(import) = &self.import {
            return import_table(&import.path, &import.mapping);
        }
        let prompts = self
            .prompts
            .as_ref()
            .ok_or_else(|| CorpusError::Unsupported("config names no prompts file".into()))?;
        let mut responses = self.responses.clone();
        responses.extend(extra_responses.iter().cloned());
        load_corpus_files(prompts, self.prompts_format, &responses)
    }
}
