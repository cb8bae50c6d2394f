//! Deterministic reference classifiers.
//!
//! These are small lexicon and hashing models whose only job is to give the
//! pipeline explainable, reproducible answers in tests and offline runs. They
//! make no claim to the accuracy of the hosted models they stand in for.
//!
//! * partisanship: seeded keyword weights over four ideology lexicons,
//!   squashed through a logistic.
//! * sentiment: positive/negative lexicon hit ratio with add-one smoothing.
//! * embedding: seeded feature hashing of tokens into a fixed number of
//!   buckets (64 by default).
//! * subjectivity: opinion-marker count against numeric evidence.
//!
//! Lexicon entries ending in `*` match any token with that prefix; other
//! entries match whole tokens only.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{
    Answer, Backend, BackendError, BackendSpec, Query, Role, LABEL_AUTHORITARIANISM, LABEL_CONSERVATISM,
    LABEL_LIBERALISM, LABEL_LIBERTARIANISM,
};
use crate::text::{is_numeric_token, tokens};

pub const DEFAULT_DIMENSION: usize = 64;

const LIBERALISM: &[&str] = &[
    "equal*", "inequal*", "welfare", "progressive*", "universal", "healthcare", "wage", "wages", "union",
    "unions", "climate", "divers*", "inclus*", "redistribut*", "justice", "worker*", "affordab*", "liberal*",
    "marginaliz*", "environment*", "renewable*", "collective*", "labor", "solidarity", "public",
];

const CONSERVATISM: &[&str] = &[
    "tradition*", "famil*", "faith*", "relig*", "church*", "heritage", "patriot*", "conservativ*", "border*",
    "moral*", "values", "marriage", "fiscal*", "deficit*", "prudent*", "custom*", "responsib*", "ancest*",
    "continuity", "virtue*", "community",
];

const LIBERTARIANISM: &[&str] = &[
    "libert*", "freedom*", "free", "freely", "voluntar*", "individual*", "privacy", "property", "market*",
    "deregulat*", "autonom*", "consent*", "choice*", "choose", "coerc*", "decentraliz*", "entrepreneur*",
    "ownership", "minimal", "self",
];

const AUTHORITARIANISM: &[&str] = &[
    "order", "authorit*", "obedien*", "obey*", "discipline*", "control*", "strong", "surveil*", "security",
    "stabil*", "unity", "unified", "command*", "enforce*", "loyal*", "centraliz*", "hierarch*", "censor*",
    "punish*", "leader*", "supreme", "state",
];

const POSITIVE: &[&str] = &[
    "good", "great", "excellent", "positive", "benefi*", "prosper*", "improv*", "achiev*", "celebrat*",
    "flourish*", "thriv*", "success*", "glori*", "harmon*", "hope*", "happ*", "joy*", "proud", "pride", "peace*",
    "progress*", "remarkabl*", "admir*", "welcom*", "win", "wins", "strength*", "gain*", "support*",
];

const NEGATIVE: &[&str] = &[
    "bad", "terribl*", "war", "wars", "violen*", "death*", "dead", "kill*", "crisis", "suffer*", "tragic*",
    "tragedy", "horribl*", "fail*", "corrupt*", "oppress*", "abus*", "fear*", "threat*", "danger*", "hate*",
    "anger", "angry", "destroy*", "destruct*", "poverty", "atrocit*", "massacre*", "brutal*", "cruel*", "harm*",
    "grim", "negative", "unfortunate*", "regret*", "sorry", "cannot", "unable", "conflict*", "loss*", "victim*",
];

const OPINION_MARKERS: &[&str] = &[
    "i", "me", "my", "mine", "we", "our", "think", "believe", "feel", "opinion", "should", "must", "ought",
    "best", "worst", "clearly", "obviously", "personally", "arguably", "undoubtedly", "love", "hate",
    "wonderful", "terrible", "beautiful", "disgraceful", "shameful",
];

fn matches(entry: &str, token: &str) -> bool {
    match entry.strip_suffix('*') {
        Some(prefix) => token.starts_with(prefix),
        None => entry == token,
    }
}

fn lexicon_match<'a>(lexicon: &[&'a str], token: &str) -> Option<&'a str> {
    lexicon.iter().copied().find(|entry| matches(entry, token))
}

fn seeded_hash(seed: u64, domain: &str, item: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(item.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Uniform value in [0, 1) derived from the hash.
fn seeded_unit(seed: u64, domain: &str, item: &str) -> f64 {
    (seeded_hash(seed, domain, item) >> 11) as f64 / (1u64 << 53) as f64
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic gain and offset for partisanship evidence: zero hits maps to
/// about 0.12, three average hits to about 0.73, six to about 0.98.
const PARTISAN_GAIN: f64 = 1.0;
const PARTISAN_OFFSET: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    role: Role,
    seed: u64,
    model: String,
    dimension: usize,
}

impl ReferenceBackend {
    pub fn new(role: Role, seed: u64) -> Self {
        Self {
            role,
            seed,
            model: format!("reference/{role}"),
            dimension: DEFAULT_DIMENSION,
        }
    }

    pub fn from_spec(spec: &BackendSpec) -> Self {
        Self {
            role: spec.role,
            seed: spec.seed.unwrap_or_default(),
            model: spec.effective_model(),
            dimension: spec.dimension.unwrap_or(DEFAULT_DIMENSION),
        }
    }

    fn lexicon_for(label: &str) -> Option<&'static [&'static str]> {
        match label {
            LABEL_LIBERALISM => Some(LIBERALISM),
            LABEL_CONSERVATISM => Some(CONSERVATISM),
            LABEL_LIBERTARIANISM => Some(LIBERTARIANISM),
            LABEL_AUTHORITARIANISM => Some(AUTHORITARIANISM),
            _ => None,
        }
    }

    /// Seeded weight in [0.75, 1.25) for one lexicon entry under one label.
    fn weight(&self, label: &str, entry: &str) -> f64 {
        0.75 + 0.5 * seeded_unit(self.seed, label, entry)
    }

    /// Weighted evidence for `label`. Labels outside the four ideologies fall
    /// back to whole-token overlap with the label's own words.
    pub fn evidence(&self, premise_tokens: &[String], label: &str) -> f64 {
        match Self::lexicon_for(label) {
            Some(lexicon) => premise_tokens
                .iter()
                .filter_map(|t| lexicon_match(lexicon, t))
                .map(|entry| self.weight(label, entry))
                .sum(),
            None => {
                let label_tokens: Vec<String> =
                    tokens(label).into_iter().filter(|t| t != "supports").collect();
                premise_tokens
                    .iter()
                    .filter(|t| label_tokens.contains(t))
                    .map(|t| self.weight(label, t))
                    .sum()
            }
        }
    }

    fn partisanship(&self, premise: &str, hypotheses: &[String]) -> BTreeMap<String, f64> {
        let premise_tokens = tokens(premise);
        hypotheses
            .iter()
            .map(|label| {
                let evidence = self.evidence(&premise_tokens, label);
                (label.clone(), logistic(PARTISAN_GAIN * evidence - PARTISAN_OFFSET))
            })
            .collect()
    }

    fn sentiment(&self, text: &str) -> [f64; 3] {
        let toks = tokens(text);
        let positive = toks.iter().filter(|t| lexicon_match(POSITIVE, t).is_some()).count() as f64;
        let negative = toks.iter().filter(|t| lexicon_match(NEGATIVE, t).is_some()).count() as f64;
        let neutral = toks.len() as f64 - positive - negative;
        let total = toks.len() as f64 + 3.0;
        [(negative + 1.0) / total, (neutral + 1.0) / total, (positive + 1.0) / total]
    }

    /// Bucket index for a token.
    pub fn bucket(&self, token: &str) -> usize {
        (seeded_hash(self.seed, "embedding", token) % self.dimension as u64) as usize
    }

    fn embedding(&self, text: &str) -> Vec<f64> {
        let mut toks = tokens(text);
        if toks.is_empty() {
            // A fixed sentinel keeps empty input embeddable.
            toks.push("\u{0}empty".to_string());
        }
        let mut vector = vec![0.0; self.dimension];
        for token in &toks {
            vector[self.bucket(token)] += 1.0;
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        vector.iter_mut().for_each(|x| *x /= norm);
        vector
    }

    fn objectivity(&self, text: &str) -> f64 {
        let toks = tokens(text);
        let opinion = toks.iter().filter(|t| lexicon_match(OPINION_MARKERS, t).is_some()).count() as f64;
        let numeric = toks.iter().filter(|t| is_numeric_token(t)).count().min(4) as f64;
        logistic(0.5 + 0.5 * numeric - opinion)
    }
}

impl Backend for ReferenceBackend {
    fn role(&self) -> Role {
        self.role
    }

    fn model_identifier(&self) -> &str {
        &self.model
    }

    fn describe(&self) -> String {
        format!("reference {} backend (seed {})", self.role, self.seed)
    }

    fn dimension(&self) -> Option<usize> {
        (self.role == Role::Embedding).then_some(self.dimension)
    }

    fn infer(&self, query: &Query) -> Result<Answer, BackendError> {
        if query.role() != self.role {
            return Err(BackendError::WrongRole { expected: query.role(), actual: self.role });
        }
        Ok(match query {
            Query::Entail(q) => Answer::Scores { scores: self.partisanship(&q.premise, &q.hypotheses) },
            Query::Sentiment(text) => {
                if text.trim().is_empty() {
                    Answer::Distribution { distribution: [1.0 / 3.0; 3] }
                } else {
                    Answer::Distribution { distribution: self.sentiment(text) }
                }
            }
            Query::Embed(text) => Answer::Vector { vector: self.embedding(text) },
            Query::Objectivity(text) => Answer::Objective { p_objective: self.objectivity(text) },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{
        embed, entail, objectivity_probability, sentiment_distribution, EntailmentQuery, IDEOLOGY_LABELS,
    };

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn pro_liberal_paragraph_leans_liberal() {
        let backend = ReferenceBackend::new(Role::Partisanship, 11);
        let set = crate::backends::bundled_calibration_set();
        let paragraph = &set.iter().find(|i| i.expected == LABEL_LIBERALISM).unwrap().text;
        let query = EntailmentQuery::new(paragraph.clone(), &[LABEL_LIBERALISM, LABEL_CONSERVATISM]).unwrap();
        let result = entail(&backend, &query).unwrap();
        assert!(result.get(LABEL_LIBERALISM).unwrap() > result.get(LABEL_CONSERVATISM).unwrap());
    }

    #[test]
    fn entailment_keys_match_and_stay_in_range() {
        let backend = ReferenceBackend::new(Role::Partisanship, 3);
        let mut labels: Vec<&str> = IDEOLOGY_LABELS.to_vec();
        labels.push("Supports Monarchy");
        let query = EntailmentQuery::new("The monarchy and the free market.", &labels).unwrap();
        let result = entail(&backend, &query).unwrap();
        assert_eq!(result.per_label.len(), 5);
        assert!(result.per_label.values().all(|p| (0.0..=1.0).contains(p)));
        assert!(result.get("Supports Monarchy").unwrap() > logistic(-PARTISAN_OFFSET));
    }

    #[test]
    fn empty_text_sentiment_is_uniform() {
        let backend = ReferenceBackend::new(Role::Sentiment, 0);
        let d = sentiment_distribution(&backend, "").unwrap();
        assert_eq!((d.p_negative, d.p_neutral, d.p_positive), (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0));
    }

    #[test]
    fn negative_lexicon_text_leans_negative() {
        let backend = ReferenceBackend::new(Role::Sentiment, 0);
        let d = sentiment_distribution(&backend, "war violence death tragedy").unwrap();
        assert!(d.p_negative > d.p_positive);
        // (4 + 1) / 7 against 1 / 7
        assert!((d.p_negative - 5.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_vocabulary_is_orthogonal() {
        let backend = ReferenceBackend::new(Role::Embedding, 1);
        let a = "tariffs agriculture exports";
        let b = "election ballots";
        let buckets_a: Vec<usize> = tokens(a).iter().map(|t| backend.bucket(t)).collect();
        let buckets_b: Vec<usize> = tokens(b).iter().map(|t| backend.bucket(t)).collect();
        assert!(buckets_a.iter().all(|x| !buckets_b.contains(x)), "fixture collides: {buckets_a:?} {buckets_b:?}");
        let va = embed(&backend, a).unwrap();
        let vb = embed(&backend, b).unwrap();
        assert_eq!(dot(va.components(), vb.components()), 0.0);
    }

    #[test]
    fn identical_texts_embed_identically_and_unit_norm() {
        let backend = ReferenceBackend::new(Role::Embedding, 5);
        let va = embed(&backend, "The treaty was signed in 1997.").unwrap();
        let vb = embed(&backend, "The treaty was signed in 1997.").unwrap();
        assert_eq!(va, vb);
        assert_eq!(va.dimension(), DEFAULT_DIMENSION);
        assert!((va.norm() - 1.0).abs() < 1e-12);
        assert!((embed(&backend, "").unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_truncates_to_256_words() {
        let backend = ReferenceBackend::new(Role::Embedding, 5);
        let words: Vec<String> = (0..300).map(|i| format!("word{i}")).collect();
        let full = words.join(" ");
        let prefix = words[..256].join(" ");
        assert_eq!(embed(&backend, &full).unwrap(), embed(&backend, &prefix).unwrap());
        let shorter = words[..255].join(" ");
        assert_ne!(embed(&backend, &full).unwrap(), embed(&backend, &shorter).unwrap());
    }

    #[test]
    fn objectivity_rules() {
        let backend = ReferenceBackend::new(Role::Subjectivity, 0);
        let factual = "The treaty was signed in 1997 by 12 delegations.";
        assert!(objectivity_probability(&backend, factual).unwrap() >= 0.5);
        let opinion = "I think this policy is the worst idea and we should reject it.";
        assert!(objectivity_probability(&backend, opinion).unwrap() < 0.5);
    }

    #[test]
    fn seed_changes_weights_but_not_determinism() {
        let a = ReferenceBackend::new(Role::Partisanship, 1);
        let b = ReferenceBackend::new(Role::Partisanship, 2);
        let toks = tokens("equality and welfare for workers");
        assert_eq!(a.evidence(&toks, LABEL_LIBERALISM), a.evidence(&toks, LABEL_LIBERALISM));
        assert_ne!(a.evidence(&toks, LABEL_LIBERALISM), b.evidence(&toks, LABEL_LIBERALISM));
    }

    #[test]
    fn wrong_role_query_is_rejected() {
        let backend = ReferenceBackend::new(Role::Sentiment, 0);
        assert!(backend.infer(&Query::Embed("x".into())).is_err());
    }
}
