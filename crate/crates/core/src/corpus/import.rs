//! Adapter for wide prompt/response tables such as the public geopolitical
//! bias dataset: one row per prompt, one column per model's response.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{checked, split_tags, Category, Corpus, CorpusError, PromptRecord, ResponseRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Csv,
    Jsonl,
}

/// Column mapping from a source table onto corpus records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportMapping {
    #[serde(default)]
    pub format: TableFormat,
    /// Column holding the prompt id. Rows are numbered `p1`, `p2`, ... when absent.
    #[serde(default)]
    pub id_column: Option<String>,
    pub text_column: String,
    #[serde(default)]
    pub category_column: Option<String>,
    /// Used when there is no category column or a cell is empty.
    #[serde(default)]
    pub default_category: Option<Category>,
    /// Source value (matched case-insensitively) to category. Unmapped values
    /// are normalized (lowercase, spaces and hyphens to `_`) and parsed.
    #[serde(default)]
    pub category_values: BTreeMap<String, Category>,
    #[serde(default)]
    pub region_column: Option<String>,
    #[serde(default = "default_separator")]
    pub region_separator: char,
    /// model_id to the column holding that model's response.
    #[serde(default)]
    pub response_columns: BTreeMap<String, String>,
    /// Timestamp stamped on imported responses; the Unix epoch when absent.
    #[serde(default)]
    pub collected_at: Option<DateTime<Utc>>,
}

fn default_separator() -> char {
    ','
}

impl ImportMapping {
    fn category(&self, raw: Option<&str>) -> Result<Category, String> {
        let raw = raw.map(str::trim).filter(|s| !s.is_empty());
        let Some(raw) = raw else {
            return self.default_category.ok_or_else(|| "missing category".to_string());
        };
        let lowered = raw.to_lowercase();
        if let Some((_, c)) = self.category_values.iter().find(|(k, _)| k.to_lowercase() == lowered) {
            return Ok(*c);
        }
        lowered.replace([' ', '-'], "_").parse::<Category>().map_err(|_| raw.to_string())
    }
}

fn cell_string(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// A source row: 1-based line number and its named fields.
type Row = (usize, BTreeMap<String, String>);

fn read_rows(path: &Path, format: TableFormat) -> Result<Vec<Row>, CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let parse_err = |line: usize, message: String| CorpusError::Parse { path: path.to_path_buf(), line, message };
    let file = File::open(path).map_err(io_err)?;
    let mut rows = Vec::new();
    match format {
        TableFormat::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
            for (idx, record) in reader.records().enumerate() {
                let record = record.map_err(|e| parse_err(idx + 2, e.to_string()))?;
                let row = headers.iter().zip(record.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect();
                rows.push((idx + 2, row));
            }
        }
        TableFormat::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: Map<String, Value> =
                    serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, e.to_string()))?;
                let row = value.iter().map(|(k, v)| (k.clone(), cell_string(v))).collect();
                rows.push((idx + 1, row));
            }
        }
    }
    Ok(rows)
}

/// Imports a wide table into a validated corpus. Empty response cells become
/// empty-text responses with unset refusal status.
pub fn import_table(path: &Path, mapping: &ImportMapping) -> Result<Corpus, CorpusError> {
    let rows = read_rows(path, mapping.format)?;
    let collected_at = mapping.collected_at.unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    let source = path.display().to_string();
    let mut corpus = Corpus::default();

    for (ordinal, (line, row)) in rows.iter().enumerate() {
        let missing = |column: &str| CorpusError::Parse {
            path: path.to_path_buf(),
            line: *line,
            message: format!("missing column {column:?}"),
        };
        let prompt_id = match &mapping.id_column {
            Some(col) => row.get(col).cloned().ok_or_else(|| missing(col))?,
            None => format!("p{}", ordinal + 1),
        };
        let text = row.get(&mapping.text_column).cloned().ok_or_else(|| missing(&mapping.text_column))?;
        let raw_category = match &mapping.category_column {
            Some(col) => Some(row.get(col).ok_or_else(|| missing(col))?.as_str()),
            None => None,
        };
        let category = mapping.category(raw_category).map_err(|value| CorpusError::UnknownCategory {
            path: path.to_path_buf(),
            line: *line,
            value,
        })?;
        let region_tags = mapping
            .region_column
            .as_ref()
            .and_then(|col| row.get(col))
            .map(|raw| split_tags(raw, mapping.region_separator))
            .unwrap_or_default();

        for (model_id, column) in &mapping.response_columns {
            let text = row.get(column).cloned().ok_or_else(|| missing(column))?;
            let mut provenance = Map::new();
            provenance.insert("source".into(), Value::String(source.clone()));
            provenance.insert("row".into(), Value::from(*line));
            corpus.responses.push(ResponseRecord {
                prompt_id: prompt_id.clone(),
                model_id: model_id.clone(),
                text,
                refusal: None,
                collected_at,
                provenance,
            });
        }
        corpus.prompts.push(PromptRecord { prompt_id, text, category, region_tags });
    }
    checked(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn mapping() -> ImportMapping {
        serde_json::from_value(serde_json::json!({
            "text_column": "prompt",
            "category_column": "type",
            "category_values": {"False Claim": "false_claims"},
            "region_column": "regions",
            "response_columns": {"r1": "deepseek_r1", "chat": "deepseek_chat"}
        }))
        .unwrap()
    }

    #[test]
    fn imports_wide_csv() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(
            file,
            "prompt,type,regions,deepseek_r1,deepseek_chat\n\
             \"What happened?\",Objective,\"China, Taiwan\",\"A long answer.\",\n\
             Is it true?,false claim,Russia,No.,Sorry\n"
        )
        .unwrap();
        let corpus = import_table(file.path(), &mapping()).unwrap();
        assert_eq!(corpus.prompts.len(), 2);
        assert_eq!(corpus.responses.len(), 4);
        assert_eq!(corpus.prompts[0].prompt_id, "p1");
        assert_eq!(corpus.prompts[0].category, Category::Objective);
        assert_eq!(corpus.prompts[0].region_tags, vec!["China", "Taiwan"]);
        assert_eq!(corpus.prompts[1].category, Category::FalseClaims);
        let chat_first = corpus.responses.iter().find(|r| r.prompt_id == "p1" && r.model_id == "chat").unwrap();
        assert_eq!(chat_first.text, "");
        assert_eq!(chat_first.refusal, None);
    }

    #[test]
    fn imports_jsonl_rows_and_reports_unknown_category() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, r#"{{"prompt":"Q1","type":"reasoning","deepseek_r1":"A","deepseek_chat":"B"}}"#).unwrap();
        writeln!(file, r#"{{"prompt":"Q2","type":"poetry","deepseek_r1":"A","deepseek_chat":"B"}}"#).unwrap();
        let mut m = mapping();
        m.format = TableFormat::Jsonl;
        m.region_column = None;
        match import_table(file.path(), &m).unwrap_err() {
            CorpusError::UnknownCategory { line, value, .. } => {
                assert_eq!(line, 2);
                assert_eq!(value, "poetry");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
