use chrono::{TimeZone, Utc};
use compass_audit_core::corpus::{
    load_corpus, validate_corpus, Category, Corpus, CorpusError, CorpusFormat, PromptRecord, Refusal, ResponseRecord,
};
use proptest::prelude::*;
use serde_json::json;

fn arb_category() -> impl Strategy<Value = Category> {
    prop::sample::select(Category::ALL.to_vec())
}

fn arb_refusal() -> impl Strategy<Value = Option<Refusal>> {
    prop::option::of(prop::sample::select(vec![Refusal::None, Refusal::ApiError, Refusal::FlatRefusal]))
}

/// Corpora that satisfy every invariant, with awkward text.
fn arb_corpus() -> impl Strategy<Value = Corpus> {
    let prompts = prop::collection::vec(("[ -~\n\t\u{e9}\u{4e2d}]{1,40}", arb_category(), prop::collection::vec("[A-Za-z ]{1,12}", 0..3)), 1..6);
    let answers = prop::collection::vec(("[ -~\n\u{1F600}]{0,60}", arb_refusal(), 0i64..2_000_000_000), 0..12);
    (prompts, answers).prop_map(|(prompts, answers)| {
        let prompts: Vec<PromptRecord> = prompts
            .into_iter()
            .enumerate()
            .map(|(i, (text, category, region_tags))| PromptRecord {
                prompt_id: format!("p{i}"),
                text: format!("Q{i}: {text}"),
                category,
                region_tags,
            })
            .collect();
        let responses = answers
            .into_iter()
            .enumerate()
            .map(|(i, (text, refusal, secs))| {
                let text = match refusal {
                    Some(Refusal::ApiError) => String::new(),
                    Some(Refusal::None) => format!("A{i} {text}"),
                    _ => text,
                };
                let mut provenance = serde_json::Map::new();
                provenance.insert("endpoint".into(), json!("https://example.test/v1"));
                provenance.insert("attempts".into(), json!(i % 3 + 1));
                ResponseRecord {
                    prompt_id: format!("p{}", i % prompts.len()),
                    model_id: format!("model-{}", i / prompts.len()),
                    text,
                    refusal,
                    collected_at: Utc.timestamp_opt(secs, 0).unwrap(),
                    provenance,
                }
            })
            .collect();
        Corpus::new(prompts, responses)
    })
}

#[derive(Debug, Clone)]
enum Damage {
    DuplicatePrompt,
    DuplicateResponse,
    Dangling,
    ApiErrorText,
    EmptyAnswer,
}

fn damage(corpus: &mut Corpus, how: &Damage) {
    let stamp = Utc.timestamp_opt(0, 0).unwrap();
    let response = |prompt_id: &str, text: &str, refusal| ResponseRecord {
        prompt_id: prompt_id.into(),
        model_id: "damaged".into(),
        text: text.into(),
        refusal,
        collected_at: stamp,
        provenance: Default::default(),
    };
    match how {
        Damage::DuplicatePrompt => {
            let first = corpus.prompts[0].clone();
            corpus.prompts.push(first);
        }
        Damage::DuplicateResponse => {
            corpus.responses.push(response("p0", "x", None));
            corpus.responses.push(response("p0", "y", None));
        }
        Damage::Dangling => corpus.responses.push(response("p99", "x", None)),
        Damage::ApiErrorText => corpus.responses.push(response("p0", "oops", Some(Refusal::ApiError))),
        Damage::EmptyAnswer => corpus.responses.push(response("p0", "  ", Some(Refusal::None))),
    }
}

proptest! {
    #[test]
    fn serialize_then_load_is_identity(corpus in arb_corpus()) {
        prop_assert!(validate_corpus(&corpus).is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(&path, corpus.to_jsonl_string()).unwrap();
        let loaded = load_corpus(&path, CorpusFormat::Jsonl).unwrap();
        prop_assert_eq!(loaded, corpus);
    }

    #[test]
    fn validation_agrees_with_loader(
        mut corpus in arb_corpus(),
        how in prop::sample::select(vec![
            Damage::DuplicatePrompt, Damage::DuplicateResponse, Damage::Dangling, Damage::ApiErrorText, Damage::EmptyAnswer,
        ]),
        apply in any::<bool>(),
    ) {
        if apply {
            damage(&mut corpus, &how);
        }
        let violations = validate_corpus(&corpus);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(&path, corpus.to_jsonl_string()).unwrap();
        let loaded = load_corpus(&path, CorpusFormat::Jsonl);
        prop_assert_eq!(violations.is_empty(), loaded.is_ok());
        prop_assert_eq!(apply, !violations.is_empty());
        if let Err(CorpusError::Integrity(reported)) = loaded {
            prop_assert_eq!(reported, violations);
        }
    }
}

#[test]
fn study_scale_corpus_loads() {
    let prompts: Vec<PromptRecord> = (0..300)
        .map(|i| PromptRecord {
            prompt_id: format!("q{i:03}"),
            text: format!("Political question number {i}?"),
            category: Category::ALL[i % 5],
            region_tags: vec!["China".into()],
        })
        .collect();
    let responses: Vec<ResponseRecord> = (0..6)
        .flat_map(|m| {
            prompts.iter().map(move |p| ResponseRecord {
                prompt_id: p.prompt_id.clone(),
                model_id: format!("model-{m}"),
                text: format!("Answer from model {m}."),
                refusal: None,
                collected_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
                provenance: Default::default(),
            })
        })
        .collect();
    let corpus = Corpus::new(prompts, responses);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.jsonl");
    std::fs::write(&path, corpus.to_jsonl_string()).unwrap();
    let loaded = load_corpus(&path, CorpusFormat::Jsonl).unwrap();
    assert_eq!((loaded.prompts.len(), loaded.responses.len(), loaded.model_ids().len()), (300, 1800, 6));
}
