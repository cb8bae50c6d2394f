//! Seeded synthetic corpora and score sets for the benchmarks.

use chrono::{DateTime, Utc};
use compass_audit_core::backends::{BackendSet, BackendSpec, Role};
use compass_audit_core::corpus::{Category, Corpus, PromptRecord, Refusal, ResponseRecord};
use compass_audit_core::metrics::{composite_bias, PolarityPair, ScoreRecord, Weights};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "tax", "market", "union", "welfare", "border", "tradition", "freedom", "order", "policy", "wage", "trade",
    "climate", "security", "rights", "state", "community", "growth", "equality", "law", "reform",
];

fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `prompts` prompts answered by `models` models, about 10% flat refusals.
pub fn synthetic_corpus(prompts: usize, models: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompt_records: Vec<PromptRecord> = (0..prompts)
        .map(|i| PromptRecord {
            prompt_id: format!("p{i:04}"),
            text: sentence(&mut rng, 12) + "?",
            category: Category::ALL[i % Category::ALL.len()],
            region_tags: vec![],
        })
        .collect();
    let mut responses = Vec::with_capacity(prompts * models);
    for m in 0..models {
        for p in &prompt_records {
            let refused = rng.gen_bool(0.1);
            responses.push(ResponseRecord {
                prompt_id: p.prompt_id.clone(),
                model_id: format!("model-{m}"),
                text: if refused { "I cannot discuss this topic.".into() } else { sentence(&mut rng, 60) },
                refusal: Some(if refused { Refusal::FlatRefusal } else { Refusal::None }),
                collected_at: DateTime::<Utc>::UNIX_EPOCH,
                provenance: Default::default(),
            });
        }
    }
    Corpus::new(prompt_records, responses)
}

pub fn reference_backends(seed: u64) -> BackendSet {
    let specs: Vec<BackendSpec> = Role::ALL.iter().map(|r| BackendSpec::reference(*r, seed)).collect();
    BackendSet::open(&specs).expect("reference backends always open")
}

/// Plausible score records matching [`synthetic_corpus`] ids.
pub fn synthetic_scores(corpus: &Corpus, seed: u64) -> Vec<ScoreRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .responses
        .iter()
        .map(|r| {
            let refusal = r.refusal_or_none();
            let topicality = rng.gen_range(0.0..1.0);
            if refusal != Refusal::None {
                return ScoreRecord {
                    prompt_id: r.prompt_id.clone(),
                    model_id: r.model_id.clone(),
                    polarity: None,
                    partisanship: None,
                    topicality,
                    sentiment: None,
                    objectivity: None,
                    composite: None,
                    refusal,
                };
            }
            let polarity = PolarityPair { a: rng.gen_range(-1.0..1.0), b: rng.gen_range(-1.0..1.0) };
            let partisanship = polarity.a.hypot(polarity.b);
            let sentiment = rng.gen_range(-1.0..1.0);
            let objectivity = rng.gen_range(0.0..1.0);
            let composite = composite_bias(partisanship, topicality, sentiment, objectivity, &Weights::DEFAULT)
                .expect("values are in range");
            ScoreRecord {
                prompt_id: r.prompt_id.clone(),
                model_id: r.model_id.clone(),
                polarity: Some(polarity),
                partisanship: Some(partisanship),
                topicality,
                sentiment: Some(sentiment),
                objectivity: Some(objectivity),
                composite: Some(composite),
                refusal,
            }
        })
        .collect()
}
