//! Partisanship calibration: every exemplar paragraph should be assigned its
//! own ideology label as the most-entailed of the four.

use serde::{Deserialize, Serialize};

use super::{entail, Backend, BackendError, EntailmentQuery, IDEOLOGY_LABELS};

const BUNDLED: &str = include_str!("../../assets/calibration.jsonl");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationItem {
    pub text: String,
    /// One of the four verbatim ideology labels.
    pub expected: String,
}

/// Twelve exemplar paragraphs, three per ideology.
pub fn bundled_calibration_set() -> Vec<CalibrationItem> {
    parse_calibration_set(BUNDLED).expect("bundled calibration set is valid JSON")
}

/// Parses a JSONL calibration set (`{"text": ..., "expected": ...}` per line).
pub fn parse_calibration_set(jsonl: &str) -> Result<Vec<CalibrationItem>, String> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub expected: String,
    pub predicted: String,
    pub probability: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub outcomes: Vec<CalibrationOutcome>,
    pub passed: usize,
    pub total: usize,
    pub min_winning_probability: f64,
}

impl CalibrationReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

pub fn calibrate_partisanship(
    backend: &dyn Backend,
    set: &[CalibrationItem],
) -> Result<CalibrationReport, BackendError> {
    if set.is_empty() {
        return Err(BackendError::InvalidInput("calibration set is empty".into()));
    }
    if let Some(item) = set.iter().find(|i| !IDEOLOGY_LABELS.contains(&i.expected.as_str())) {
        return Err(BackendError::InvalidInput(format!("unknown ideology label {:?}", item.expected)));
    }
    if let Some(missing) = IDEOLOGY_LABELS.iter().find(|l| !set.iter().any(|i| i.expected == **l)) {
        return Err(BackendError::InvalidInput(format!("calibration set has no paragraph for {missing:?}")));
    }

    let mut outcomes = Vec::with_capacity(set.len());
    for item in set {
        let result = entail(backend, &EntailmentQuery::new(item.text.clone(), &IDEOLOGY_LABELS)?)?;
        // Ties resolve to the earliest label in the fixed order.
        let (predicted, probability) = IDEOLOGY_LABELS
            .iter()
            .map(|l| (*l, result.get(l).expect("keys checked by entail")))
            .fold(None::<(&str, f64)>, |best, (l, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((l, p)),
            })
            .expect("four labels");
        outcomes.push(CalibrationOutcome {
            expected: item.expected.clone(),
            predicted: predicted.to_string(),
            probability,
            passed: predicted == item.expected,
        });
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    let min_winning_probability = outcomes.iter().map(|o| o.probability).fold(f64::INFINITY, f64::min);
    Ok(CalibrationReport { total: outcomes.len(), passed, min_winning_probability, outcomes })
}
