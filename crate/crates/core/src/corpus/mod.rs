//! Prompt/response dataset: record types, loading, validation, and refusal
//! classification.

mod import;
mod refusal;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use import::{import_table, ImportMapping, TableFormat};
pub use refusal::{detect_refusal, ApiStatus, RefusalRules, DEFAULT_REFUSAL_PATTERNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Objective,
    Subjective,
    Reasoning,
    FalseClaims,
    Unanswerable,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Objective,
        Category::Subjective,
        Category::Reasoning,
        Category::FalseClaims,
        Category::Unanswerable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Objective => "objective",
            Category::Subjective => "subjective",
            Category::Reasoning => "reasoning",
            Category::FalseClaims => "false_claims",
            Category::Unanswerable => "unanswerable",
        }
    }

    /// Row label used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            Category::Objective => "Objective",
            Category::Subjective => "Subjective",
            Category::Reasoning => "Reasoning",
            Category::FalseClaims => "False Claims",
            Category::Unanswerable => "Unanswerable",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refusal {
    None,
    ApiError,
    FlatRefusal,
}

impl Refusal {
    pub fn as_str(self) -> &'static str {
        match self {
            Refusal::None => "none",
            Refusal::ApiError => "api_error",
            Refusal::FlatRefusal => "flat_refusal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub text: String,
    pub category: Category,
    #[serde(default)]
    pub region_tags: Vec<String>,
}

/// One model's reply to one prompt. `refusal` is `None` until classified,
/// either by an explicit field in the input file or by [`detect_refusal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub prompt_id: String,
    pub model_id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refusal: Option<Refusal>,
    pub collected_at: DateTime<Utc>,
    #[serde(default)]
    pub provenance: Map<String, Value>,
}

impl ResponseRecord {
    /// Refusal status, treating an unclassified record as answered.
    pub fn refusal_or_none(&self) -> Refusal {
        self.refusal.unwrap_or(Refusal::None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    DuplicatePromptId,
    EmptyPromptText,
    DuplicateResponseKey,
    DanglingPromptId,
    ApiErrorWithText,
    AnsweredWithoutText,
}

impl Rule {
    pub fn describe(&self) -> &'static str {
        match self {
            Rule::DuplicatePromptId => "duplicate prompt_id",
            Rule::EmptyPromptText => "empty prompt text",
            Rule::DuplicateResponseKey => "duplicate response key",
            Rule::DanglingPromptId => "response references unknown prompt_id",
            Rule::ApiErrorWithText => "api_error response has non-empty text",
            Rule::AnsweredWithoutText => "answered response has empty text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `prompt_id` for prompt rules, `prompt_id/model_id` for response rules.
    pub key: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.rule.describe())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown category {value:?}")]
    UnknownCategory {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("corpus integrity: {}", summarize_violations(.0))]
    Integrity(Vec<Violation>),
    #[error("{0}")]
    Unsupported(String),
}

fn summarize_violations(violations: &[Violation]) -> String {
    let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
    let mut out = shown.join("; ");
    if violations.len() > 5 {
        out.push_str(&format!("; and {} more", violations.len() - 5));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
    Csv,
}

/// Prompts plus responses. Build with [`Corpus::new`]; the loaders only hand
/// out corpora that pass [`validate_corpus`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub prompts: Vec<PromptRecord>,
    pub responses: Vec<ResponseRecord>,
}

impl Corpus {
    pub fn new(prompts: Vec<PromptRecord>, responses: Vec<ResponseRecord>) -> Self {
        Self { prompts, responses }
    }

    pub fn model_ids(&self) -> BTreeSet<String> {
        self.responses.iter().map(|r| r.model_id.clone()).collect()
    }

    pub fn prompt_index(&self) -> HashMap<&str, &PromptRecord> {
        self.prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect()
    }

    pub fn prompt(&self, prompt_id: &str) -> Option<&PromptRecord> {
        self.prompts.iter().find(|p| p.prompt_id == prompt_id)
    }

    pub fn responses_for<'a>(&'a self, model_id: &'a str) -> impl Iterator<Item = &'a ResponseRecord> {
        self.responses.iter().filter(move |r| r.model_id == model_id)
    }

    /// Classifies every response whose refusal status is still unset.
    /// Explicit values from the input file are left alone. Returns how many
    /// records were classified.
    pub fn resolve_refusals(&mut self, rules: &RefusalRules) -> usize {
        let mut classified = 0;
        for response in self.responses.iter_mut().filter(|r| r.refusal.is_none()) {
            response.refusal = Some(detect_refusal(&response.text, ApiStatus::Ok, rules));
            classified += 1;
        }
        classified
    }

    /// Writes prompts then responses, one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for prompt in &self.prompts {
            serde_json::to_writer(&mut out, prompt)?;
            out.write_all(b"\n")?;
        }
        write_responses_jsonl(&self.responses, &mut out)
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

pub fn write_responses_jsonl<W: Write>(responses: &[ResponseRecord], mut out: W) -> std::io::Result<()> {
    for response in responses {
        serde_json::to_writer(&mut out, response)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Checks every corpus invariant and returns one entry per broken rule.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut prompt_ids = HashSet::new();
    for prompt in &corpus.prompts {
        if !prompt_ids.insert(prompt.prompt_id.as_str()) {
            violations.push(Violation { key: prompt.prompt_id.clone(), rule: Rule::DuplicatePromptId });
        }
        if prompt.text.trim().is_empty() {
            violations.push(Violation { key: prompt.prompt_id.clone(), rule: Rule::EmptyPromptText });
        }
    }

    let mut response_keys = HashSet::new();
    for response in &corpus.responses {
        let key = format!("{}/{}", response.prompt_id, response.model_id);
        if !response_keys.insert((response.prompt_id.as_str(), response.model_id.as_str())) {
            violations.push(Violation { key: key.clone(), rule: Rule::DuplicateResponseKey });
        }
        if !prompt_ids.contains(response.prompt_id.as_str()) {
            violations.push(Violation { key: response.prompt_id.clone(), rule: Rule::DanglingPromptId });
        }
        match response.refusal {
            Some(Refusal::ApiError) if !response.text.is_empty() => {
                violations.push(Violation { key, rule: Rule::ApiErrorWithText });
            }
            Some(Refusal::None) if response.text.trim().is_empty() => {
                violations.push(Violation { key, rule: Rule::AnsweredWithoutText });
            }
            _ => {}
        }
    }
    violations
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

enum Line {
    Prompt(PromptRecord),
    Response(ResponseRecord),
}

fn parse_jsonl_line(path: &Path, line_no: usize, line: &str) -> Result<Line, CorpusError> {
    let parse_err = |message: String| CorpusError::Parse { path: path.to_path_buf(), line: line_no, message };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let Value::Object(fields) = &value else {
        return Err(parse_err("expected a JSON object".into()));
    };
    if fields.contains_key("model_id") {
        return serde_json::from_value(value)
            .map(Line::Response)
            .map_err(|e| parse_err(e.to_string()));
    }
    if let Some(Value::String(category)) = fields.get("category") {
        if category.parse::<Category>().is_err() {
            return Err(CorpusError::UnknownCategory {
                path: path.to_path_buf(),
                line: line_no,
                value: category.clone(),
            });
        }
    }
    serde_json::from_value(value)
        .map(Line::Prompt)
        .map_err(|e| parse_err(e.to_string()))
}

fn read_jsonl(path: &Path, corpus: &mut Corpus) -> Result<(), CorpusError> {
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_jsonl_line(path, idx + 1, &line)? {
            Line::Prompt(p) => corpus.prompts.push(p),
            Line::Response(r) => corpus.responses.push(r),
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CsvPrompt {
    prompt_id: String,
    text: String,
    category: String,
    #[serde(default)]
    region_tags: String,
}

fn read_prompt_csv(path: &Path, corpus: &mut Corpus) -> Result<(), CorpusError> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    for (idx, row) in reader.deserialize::<CsvPrompt>().enumerate() {
        // Header occupies line 1.
        let line = idx + 2;
        let row = row.map_err(|e| CorpusError::Parse { path: path.to_path_buf(), line, message: e.to_string() })?;
        let category = row.category.parse::<Category>().map_err(|value| CorpusError::UnknownCategory {
            path: path.to_path_buf(),
            line,
            value,
        })?;
        corpus.prompts.push(PromptRecord {
            prompt_id: row.prompt_id,
            text: row.text,
            category,
            region_tags: split_tags(&row.region_tags, ';'),
        });
    }
    Ok(())
}

pub(crate) fn split_tags(raw: &str, separator: char) -> Vec<String> {
    raw.split(separator)
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

fn checked(corpus: Corpus) -> Result<Corpus, CorpusError> {
    let violations = validate_corpus(&corpus);
    if violations.is_empty() {
        Ok(corpus)
    } else {
        Err(CorpusError::Integrity(violations))
    }
}

/// Loads a single corpus file. JSONL files may interleave prompt lines and
/// response lines (a response line is one carrying `model_id`); CSV files
/// hold prompts only.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    match format {
        CorpusFormat::Jsonl => read_jsonl(path, &mut corpus)?,
        CorpusFormat::Csv => read_prompt_csv(path, &mut corpus)?,
    }
    checked(corpus)
}

/// Loads a prompt file plus any number of response JSONL files.
pub fn load_corpus_files(
    prompts: &Path,
    prompts_format: CorpusFormat,
    responses: &[PathBuf],
) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    match prompts_format {
        CorpusFormat::Jsonl => read_jsonl(prompts, &mut corpus)?,
        CorpusFormat::Csv => read_prompt_csv(prompts, &mut corpus)?,
    }
    for path in responses {
        let before = corpus.prompts.len();
        read_jsonl(path, &mut corpus)?;
        if corpus.prompts.len() != before {
            return Err(CorpusError::Unsupported(format!(
                "{} contains prompt records; response files hold responses only",
                path.display()
            )));
        }
    }
    checked(corpus)
}

/// Reads response records only, without corpus-level checks. Used to resume
/// collection from a partially written file.
pub fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>, CorpusError> {
    let mut corpus = Corpus::default();
    read_jsonl(path, &mut corpus)?;
    Ok(corpus.responses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(id: &str) -> PromptRecord {
        PromptRecord {
            prompt_id: id.into(),
            text: format!("Question {id}?"),
            category: Category::Objective,
            region_tags: vec!["China".into()],
        }
    }

    fn response(prompt_id: &str, model: &str, text: &str, refusal: Option<Refusal>) -> ResponseRecord {
        ResponseRecord {
            prompt_id: prompt_id.into(),
            model_id: model.into(),
            text: text.into(),
            refusal,
            collected_at: "2025-03-01T12:00:00Z".parse().unwrap(),
            provenance: Map::new(),
        }
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    #[test]
    fn loads_mixed_jsonl() {
        let file = write_temp(concat!(
            r#"{"prompt_id":"p1","text":"What happened in 1989?","category":"objective","region_tags":["China"]}"#, "\n",
            r#"{"prompt_id":"p2","text":"Is the policy fair?","category":"subjective","region_tags":[]}"#, "\n",
            "\n",
            r#"{"prompt_id":"p1","model_id":"m","text":"An answer.","collected_at":"2025-01-01T00:00:00Z","provenance":{"endpoint":"x"}}"#, "\n",
            r#"{"prompt_id":"p2","model_id":"m","text":"","refusal":"api_error","collected_at":"2025-01-01T00:00:00Z"}"#, "\n",
        ));
        let corpus = load_corpus(file.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(corpus.prompts.len(), 2);
        assert_eq!(corpus.responses.len(), 2);
        assert_eq!(corpus.responses[0].refusal, None);
        assert_eq!(corpus.responses[1].refusal, Some(Refusal::ApiError));
        assert_eq!(corpus.model_ids().into_iter().collect::<Vec<_>>(), vec!["m"]);
    }

    #[test]
    fn dangling_prompt_id_is_named() {
        let file = write_temp(concat!(
            r#"{"prompt_id":"p1","text":"Q","category":"objective"}"#, "\n",
            r#"{"prompt_id":"p99","model_id":"m","text":"A","collected_at":"2025-01-01T00:00:00Z"}"#, "\n",
        ));
        let err = load_corpus(file.path(), CorpusFormat::Jsonl).unwrap_err();
        match &err {
            CorpusError::Integrity(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].key, "p99");
                assert_eq!(v[0].rule, Rule::DanglingPromptId);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("p99"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let file = write_temp(concat!(
            r#"{"prompt_id":"p1","text":"Q","category":"objective"}"#, "\n",
            "{not json\n",
        ));
        match load_corpus(file.path(), CorpusFormat::Jsonl).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_category_is_rejected() {
        let file = write_temp(r#"{"prompt_id":"p1","text":"Q","category":"opinion"}"#);
        match load_corpus(file.path(), CorpusFormat::Jsonl).unwrap_err() {
            CorpusError::UnknownCategory { line, value, .. } => {
                assert_eq!(line, 1);
                assert_eq!(value, "opinion");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_prompt_rejected_at_load() {
        let file = write_temp(concat!(
            r#"{"prompt_id":"p1","text":"Q","category":"objective"}"#, "\n",
            r#"{"prompt_id":"p1","text":"Q2","category":"reasoning"}"#, "\n",
        ));
        assert!(matches!(
            load_corpus(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::Integrity(_))
        ));
    }

    #[test]
    fn csv_prompts_load() {
        let file = write_temp("prompt_id,text,category,region_tags\np1,\"Hello, world\",false_claims,China;Taiwan\np2,Why?,unanswerable,\n");
        let corpus = load_corpus(file.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(corpus.prompts[0].text, "Hello, world");
        assert_eq!(corpus.prompts[0].category, Category::FalseClaims);
        assert_eq!(corpus.prompts[0].region_tags, vec!["China", "Taiwan"]);
        assert!(corpus.prompts[1].region_tags.is_empty());
    }

    #[test]
    fn csv_unknown_category_reports_data_line() {
        let file = write_temp("prompt_id,text,category,region_tags\np1,Q,objective,\np2,Q,nonsense,\n");
        match load_corpus(file.path(), CorpusFormat::Csv).unwrap_err() {
            CorpusError::UnknownCategory { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_reports_each_rule() {
        let valid = Corpus::new(vec![prompt("p1")], vec![response("p1", "m", "ok", Some(Refusal::None))]);
        assert!(validate_corpus(&valid).is_empty());

        let dup = Corpus::new(
            vec![prompt("p1")],
            vec![response("p1", "m", "a", None), response("p1", "m", "b", None)],
        );
        let v = validate_corpus(&dup);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule.describe(), "duplicate response key");
        assert_eq!(v[0].key, "p1/m");

        let bad_error = Corpus::new(vec![prompt("p1")], vec![response("p1", "m", "text", Some(Refusal::ApiError))]);
        let v = validate_corpus(&bad_error);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::ApiErrorWithText);

        let empty_answer = Corpus::new(vec![prompt("p1")], vec![response("p1", "m", " ", Some(Refusal::None))]);
        assert_eq!(validate_corpus(&empty_answer)[0].rule, Rule::AnsweredWithoutText);

        let mut blank = prompt("p2");
        blank.text = "  ".into();
        assert_eq!(validate_corpus(&Corpus::new(vec![blank], vec![]))[0].rule, Rule::EmptyPromptText);
    }

    #[test]
    fn resolve_refusals_keeps_manual_overrides() {
        let mut corpus = Corpus::new(
            vec![prompt("p1"), prompt("p2"), prompt("p3")],
            vec![
                response("p1", "m", "I cannot discuss this topic.", Some(Refusal::None)),
                response("p2", "m", "I cannot discuss this topic.", None),
                response("p3", "m", "", None),
            ],
        );
        assert_eq!(corpus.resolve_refusals(&RefusalRules::default()), 2);
        assert_eq!(corpus.responses[0].refusal, Some(Refusal::None));
        assert_eq!(corpus.responses[1].refusal, Some(Refusal::FlatRefusal));
        assert_eq!(corpus.responses[2].refusal, Some(Refusal::FlatRefusal));
    }

    #[test]
    fn response_files_must_not_carry_prompts() {
        let prompts = write_temp(r#"{"prompt_id":"p1","text":"Q","category":"objective"}"#);
        let responses = write_temp(r#"{"prompt_id":"p2","text":"Q","category":"objective"}"#);
        let err = load_corpus_files(prompts.path(), CorpusFormat::Jsonl, &[responses.path().to_path_buf()]);
        assert!(matches!(err, Err(CorpusError::Unsupported(_))));
    }
}
