//! Content-addressed record/replay cache: one JSON file per answer, named by
//! the hex SHA-256 of the canonicalized query.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{cache_key, Answer, Backend, BackendError, Query, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheInput {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub role: Role,
    pub model: String,
    pub input: CacheInput,
    pub result: Answer,
}

impl CacheEntry {
    pub fn new(role: Role, model: &str, query: &Query, result: Answer) -> Self {
        Self {
            key: cache_key(role, model, query),
            role,
            model: model.to_string(),
            input: CacheInput {
                text: query.text().to_string(),
                hypotheses: query.hypotheses().map(<[String]>::to_vec),
            },
            result,
        }
    }
}

/// Directory-backed cache. Reads go straight to the filesystem and may run
/// concurrently; writes are serialized through one lock and land atomically
/// via rename.
#[derive(Debug)]
pub struct ReplayCache {
    dir: PathBuf,
    writer: Mutex<()>,
}

impl ReplayCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Storage { path: dir.clone(), message: e.to_string() })?;
        Ok(Self { dir, writer: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, BackendError> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(BackendError::Storage { path, message: e.to_string() }),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| BackendError::Storage { path, message: format!("corrupt cache entry: {e}") })
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), BackendError> {
        let path = self.entry_path(&entry.key);
        let storage = |message: String| BackendError::Storage { path: path.clone(), message };
        let mut body = serde_json::to_vec_pretty(entry).map_err(|e| storage(e.to_string()))?;
        body.push(b'\n');
        let _guard = self.writer.lock().unwrap();
        let tmp = self.dir.join(format!(".{}.tmp", entry.key));
        let mut file = fs::File::create(&tmp).map_err(|e| storage(e.to_string()))?;
        file.write_all(&body).map_err(|e| storage(e.to_string()))?;
        file.sync_all().map_err(|e| storage(e.to_string()))?;
        fs::rename(&tmp, &path).map_err(|e| storage(e.to_string()))
    }

    /// Number of stored entries.
    pub fn len(&self) -> Result<usize, BackendError> {
        let entries = fs::read_dir(&self.dir)
            .map_err(|e| BackendError::Storage { path: self.dir.clone(), message: e.to_string() })?;
        Ok(entries
            .filter_map(Result::ok)
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count())
    }

    pub fn is_empty(&self) -> Result<bool, BackendError> {
        Ok(self.len()? == 0)
    }
}

/// Answers strictly from the cache; an absent key is an error naming the key.
#[derive(Debug)]
pub struct ReplayBackend {
    cache: ReplayCache,
    role: Role,
    model: String,
    dimension: Option<usize>,
}

impl ReplayBackend {
    pub fn new(cache: ReplayCache, role: Role, model: String, dimension: Option<usize>) -> Self {
        Self { cache, role, model, dimension }
    }
}

impl Backend for ReplayBackend {
    fn role(&self) -> Role {
        self.role
    }

    fn model_identifier(&self) -> &str {
        &self.model
    }

    fn describe(&self) -> String {
        format!("replay cache {}", self.cache.dir().display())
    }

    fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    fn infer(&self, query: &Query) -> Result<Answer, BackendError> {
        let key = cache_key(self.role, &self.model, query);
        match self.cache.get(&key)? {
            Some(entry) => Ok(entry.result),
            None => Err(BackendError::CacheMiss { role: self.role, key }),
        }
    }
}

/// Serves cached answers when present and records everything else the inner
/// backend produces.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    cache: ReplayCache,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, cache: ReplayCache) -> Self {
        Self { inner, cache }
    }
}

impl Backend for RecordingBackend {
    fn role(&self) -> Role {
        self.inner.role()
    }

    fn model_identifier(&self) -> &str {
        self.inner.model_identifier()
    }

    fn describe(&self) -> String {
        format!("{} (recording to {})", self.inner.describe(), self.cache.dir().display())
    }

    fn dimension(&self) -> Option<usize> {
        self.inner.dimension()
    }

    fn infer(&self, query: &Query) -> Result<Answer, BackendError> {
        let model = self.inner.model_identifier().to_string();
        let key = cache_key(self.role(), &model, query);
        if let Some(entry) = self.cache.get(&key)? {
            return Ok(entry.result);
        }
        let answer = self.inner.infer(query)?;
        self.cache.put(&CacheEntry::new(self.role(), &model, query, answer.clone()))?;
        Ok(answer)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::backends::{
        entail, objectivity_probability, sentiment_distribution, EntailmentQuery, ReferenceBackend,
    };

    fn backend(dir: &Path, role: Role) -> ReplayBackend {
        ReplayBackend::new(ReplayCache::open(dir).unwrap(), role, "m".into(), None)
    }

    #[test]
    fn store_then_get_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path()).unwrap();
        let query = Query::Embed("some text".into());
        let entry = CacheEntry::new(Role::Embedding, "m", &query, Answer::Vector { vector: vec![0.1, 1.0 / 3.0, -2e-300] });
        cache.put(&entry).unwrap();
        assert_eq!(cache.get(&entry.key).unwrap().unwrap(), entry);
        assert_eq!(cache.len().unwrap(), 1);
    }

    #[test]
    fn absent_key_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path()).unwrap();
        assert!(cache.get(&"0".repeat(64)).unwrap().is_none());
        let b = backend(dir.path(), Role::Sentiment);
        match sentiment_distribution(&b, "never stored") {
            Err(BackendError::CacheMiss { role, key }) => {
                assert_eq!(role, Role::Sentiment);
                assert_eq!(key, cache_key(Role::Sentiment, "m", &Query::Sentiment("never stored".into())));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_returns_stored_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path()).unwrap();
        let query = EntailmentQuery::new("premise", &["lib", "cons"]).unwrap();
        let scores = BTreeMap::from([("lib".to_string(), 0.9), ("cons".to_string(), 0.3)]);
        cache
            .put(&CacheEntry::new(Role::Partisanship, "m", &Query::Entail(query.clone()), Answer::Scores { scores }))
            .unwrap();
        cache
            .put(&CacheEntry::new(Role::Subjectivity, "m", &Query::Objectivity("t".into()), Answer::Objective { p_objective: 0.72 }))
            .unwrap();
        cache
            .put(&CacheEntry::new(
                Role::Sentiment,
                "m",
                &Query::Sentiment("t".into()),
                Answer::Distribution { distribution: [0.1, 0.2, 0.7] },
            ))
            .unwrap();

        let r = entail(&backend(dir.path(), Role::Partisanship), &query).unwrap();
        assert_eq!(r.get("lib"), Some(0.9));
        assert_eq!(r.get("cons"), Some(0.3));
        assert_eq!(objectivity_probability(&backend(dir.path(), Role::Subjectivity), "t").unwrap(), 0.72);
        // Trailing whitespace canonicalizes to the same key.
        let d = sentiment_distribution(&backend(dir.path(), Role::Sentiment), "t  \n").unwrap();
        assert_eq!((d.p_negative, d.p_neutral, d.p_positive), (0.1, 0.2, 0.7));
    }

    #[test]
    fn recording_backend_fills_cache_for_replay() {
        let dir = tempfile::tempdir().unwrap();
        let inner: Arc<dyn Backend> = Arc::new(ReferenceBackend::new(Role::Sentiment, 9));
        let recorder = RecordingBackend::new(inner.clone(), ReplayCache::open(dir.path()).unwrap());
        let live = sentiment_distribution(&recorder, "peace and prosperity").unwrap();
        let replay = ReplayBackend::new(ReplayCache::open(dir.path()).unwrap(), Role::Sentiment, inner.model_identifier().into(), None);
        assert_eq!(sentiment_distribution(&replay, "peace and prosperity").unwrap(), live);
    }
}
