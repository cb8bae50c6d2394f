//! Per-model statistics over scored responses.
//!
//! Quartiles use inclusive linear interpolation (position `(n - 1) * p` in the
//! sorted list), spread is the sample standard deviation, and outliers sit
//! beyond 1.5 IQR from the quartiles. Density curves use a Gaussian kernel with
//! Silverman's bandwidth.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError};
use crate::corpus::{Category, Corpus, PromptRecord, Refusal};
use crate::metrics::{partisanship_magnitude, polarity_of_text, PolarityPair, ScoreRecord, Weights};

/// Number of evaluation points in a density curve.
pub const KDE_POINTS: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("cannot summarize an empty list")]
    Empty,
    #[error("non-finite value {0} in input")]
    NonFinite(f64),
    #[error("no scores for model {0:?}")]
    UnknownModel(String),
    #[error("score for {model_id} references unknown prompt {prompt_id:?}")]
    UnknownPrompt { prompt_id: String, model_id: String },
    #[error("density estimate needs at least two distinct values (n = {n})")]
    Degenerate { n: usize },
    #[error("baseline partisanship is zero; amplification ratio is undefined")]
    ZeroBaseline,
    #[error("model {0:?} has no answered responses")]
    NoAnswered(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 when n = 1.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
    /// Values outside the 1.5 IQR fences, in ascending order.
    pub outliers: Vec<f64>,
}

/// Inclusive linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<DistributionSummary, AggregateError> {
    if values.is_empty() {
        return Err(AggregateError::Empty);
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(AggregateError::NonFinite(*bad));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (low, high) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let outliers = sorted.iter().copied().filter(|v| *v < low || *v > high).collect();
    Ok(DistributionSummary { n, mean, std, min: sorted[0], q1, median, q3, max: sorted[n - 1], iqr, outliers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentVectorReport {
    pub n: usize,
    /// Sum of positive scores over n.
    pub positive_power: f64,
    /// Sum of absolute negative scores over n.
    pub negative_power: f64,
    pub net_vector: f64,
    pub net_magnitude: f64,
}

impl SentimentVectorReport {
    fn from_powers(n: usize, positive_power: f64, negative_power: f64) -> Self {
        let net_vector = positive_power - negative_power;
        Self { n, positive_power, negative_power, net_vector, net_magnitude: net_vector.abs() }
    }
}

/// Net sentiment direction of one model's answered responses. Zero scores
/// count toward `n` only.
pub fn sentiment_vector(scores: &[f64]) -> Result<SentimentVectorReport, AggregateError> {
    if scores.is_empty() {
        return Err(AggregateError::Empty);
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(AggregateError::NonFinite(*bad));
    }
    let n = scores.len() as f64;
    let positive: f64 = scores.iter().filter(|s| **s > 0.0).sum();
    let negative: f64 = scores.iter().filter(|s| **s < 0.0).map(|s| s.abs()).sum();
    Ok(SentimentVectorReport::from_powers(scores.len(), positive / n, negative / n))
}

/// Gaussian kernel density sampled at [`KDE_POINTS`] evenly spaced points over
/// `[min - bw, max + bw]`, with bandwidth `1.06 * std * n^(-1/5)`.
pub fn kde_curve(values: &[f64]) -> Result<Vec<(f64, f64)>, AggregateError> {
    let n = values.len();
    if n < 2 {
        return Err(AggregateError::Degenerate { n });
    }
    let summary = summarize(values)?;
    if summary.std == 0.0 || summary.max == summary.min {
        return Err(AggregateError::Degenerate { n });
    }
    let bandwidth = 1.06 * summary.std * (n as f64).powf(-0.2);
    let start = summary.min - bandwidth;
    let step = (summary.max + bandwidth - start) / (KDE_POINTS - 1) as f64;
    let norm = 1.0 / (n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..KDE_POINTS)
        .map(|i| {
            let x = start + step * i as f64;
            let density: f64 = values.iter().map(|v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp()).sum();
            (x, density * norm)
        })
        .collect())
}

/// Density samples for a violin, or the raw values when a curve is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Curve(Vec<(f64, f64)>),
    Strip(Vec<f64>),
}

impl Density {
    pub fn of(values: &[f64]) -> Self {
        match kde_curve(values) {
            Ok(curve) => Density::Curve(curve),
            Err(_) => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                Density::Strip(sorted)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPolarity {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub prompts: usize,
    pub answered: usize,
    /// `answered / prompts`.
    pub response_rate: f64,
    pub composite: Option<DistributionSummary>,
    pub partisanship: Option<DistributionSummary>,
    /// Includes refusal records.
    pub topicality: DistributionSummary,
    pub objectivity: Option<DistributionSummary>,
    pub sentiment: Option<SentimentVectorReport>,
    pub objectivity_by_category: BTreeMap<Category, f64>,
    pub mean_polarity: Option<MeanPolarity>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn optional_summary(values: &[f64]) -> Result<Option<DistributionSummary>, AggregateError> {
    if values.is_empty() {
        Ok(None)
    } else {
        summarize(values).map(Some)
    }
}

pub fn build_model_summary(
    corpus: &Corpus,
    scores: &[ScoreRecord],
    model_id: &str,
) -> Result<ModelSummary, AggregateError> {
    let index = corpus.prompt_index();
    let records: Vec<&ScoreRecord> = scores.iter().filter(|s| s.model_id == model_id).collect();
    if records.is_empty() {
        return Err(AggregateError::UnknownModel(model_id.to_string()));
    }
    let mut composite = Vec::new();
    let mut partisanship = Vec::new();
    let mut topicality = Vec::new();
    let mut objectivity = Vec::new();
    let mut sentiment = Vec::new();
    let mut polarities = Vec::new();
    let mut by_category: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
    for record in &records {
        let prompt = index.get(record.prompt_id.as_str()).ok_or_else(|| AggregateError::UnknownPrompt {
            prompt_id: record.prompt_id.clone(),
            model_id: record.model_id.clone(),
        })?;
        topicality.push(record.topicality);
        if record.refusal != Refusal::None {
            continue;
        }
        composite.extend(record.composite);
        partisanship.extend(record.partisanship);
        sentiment.extend(record.sentiment);
        polarities.extend(record.polarity);
        if let Some(omega) = record.objectivity {
            objectivity.push(omega);
            by_category.entry(prompt.category).or_default().push(omega);
        }
    }
    let answered = records.iter().filter(|r| r.refusal == Refusal::None).count();
    let prompts = corpus.prompts.len();
    let mean_polarity = (!polarities.is_empty()).then(|| MeanPolarity {
        a: polarities.iter().map(|p| p.a).sum::<f64>() / polarities.len() as f64,
        b: polarities.iter().map(|p| p.b).sum::<f64>() / polarities.len() as f64,
    });
    Ok(ModelSummary {
        model_id: model_id.to_string(),
        prompts,
        answered,
        response_rate: if prompts == 0 { 0.0 } else { answered as f64 / prompts as f64 },
        composite: optional_summary(&composite)?,
        partisanship: optional_summary(&partisanship)?,
        topicality: summarize(&topicality)?,
        objectivity: optional_summary(&objectivity)?,
        sentiment: if sentiment.is_empty() { None } else { Some(sentiment_vector(&sentiment)?) },
        objectivity_by_category: by_category.into_iter().map(|(c, v)| (c, mean(&v))).collect(),
        mean_polarity,
    })
}

/// Mean compass position and magnitude of the prompts themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_p: f64,
}

impl Baseline {
    pub fn from_polarities(polarities: &[PolarityPair]) -> Result<Self, AggregateError> {
        if polarities.is_empty() {
            return Err(AggregateError::Empty);
        }
        let n = polarities.len() as f64;
        Ok(Self {
            n: polarities.len(),
            mean_a: polarities.iter().map(|p| p.a).sum::<f64>() / n,
            mean_b: polarities.iter().map(|p| p.b).sum::<f64>() / n,
            mean_p: polarities.iter().map(|p| partisanship_magnitude(*p)).sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("prompt {prompt_id}: partisanship backend: {source}")]
    Backend {
        prompt_id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

/// Scores every prompt's text through the response partisanship path.
pub fn prompt_baseline(prompts: &[PromptRecord], backend: &dyn Backend) -> Result<Baseline, BaselineError> {
    let polarities = prompts
        .par_iter()
        .map(|p| {
            polarity_of_text(backend, &p.text)
                .map_err(|source| BaselineError::Backend { prompt_id: p.prompt_id.clone(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Baseline::from_polarities(&polarities)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amplification {
    pub ratio: f64,
    pub amplified: bool,
}

pub fn amplification_ratio(model_mean_p: f64, baseline_mean_p: f64) -> Result<Amplification, AggregateError> {
    if baseline_mean_p <= 0.0 {
        return Err(AggregateError::ZeroBaseline);
    }
    let ratio = model_mean_p / baseline_mean_p;
    Ok(Amplification { ratio, amplified: ratio > 1.0 })
}

pub fn amplification(summary: &ModelSummary, baseline_mean_p: f64) -> Result<Amplification, AggregateError> {
    let p = summary.partisanship.as_ref().ok_or_else(|| AggregateError::NoAnswered(summary.model_id.clone()))?;
    amplification_ratio(p.mean, baseline_mean_p)
}

/// Mean objectivity per category (rows) and model (columns), each with an
/// unweighted "Average" margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectivityTable {
    pub models: Vec<String>,
    pub rows: Vec<ObjectivityRow>,
    /// Per model: mean of that model's category means.
    pub average_row: Vec<Option<f64>>,
    /// Mean of `average_row`.
    pub overall_average: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectivityRow {
    pub category: Category,
    pub values: Vec<Option<f64>>,
    /// Mean across models with a value.
    pub average: Option<f64>,
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| mean(&present))
}

pub fn objectivity_table(summaries: &[ModelSummary]) -> ObjectivityTable {
    let rows: Vec<ObjectivityRow> = Category::ALL
        .iter()
        .filter(|c| summaries.iter().any(|s| s.objectivity_by_category.contains_key(c)))
        .map(|&category| {
            let values: Vec<Option<f64>> =
                summaries.iter().map(|s| s.objectivity_by_category.get(&category).copied()).collect();
            let average = mean_present(&values);
            ObjectivityRow { category, values, average }
        })
        .collect();
    let average_row: Vec<Option<f64>> = summaries
        .iter()
        .map(|s| (!s.objectivity_by_category.is_empty()).then(|| mean(&s.objectivity_by_category.values().copied().collect::<Vec<_>>())))
        .collect();
    let overall_average = mean_present(&average_row);
    ObjectivityTable { models: summaries.iter().map(|s| s.model_id.clone()).collect(), rows, average_row, overall_average }
}

/// Metric names used for distribution exports.
pub const DISTRIBUTION_METRICS: [&str; 5] = ["composite", "partisanship", "topicality", "objectivity", "sentiment"];

fn metric_values(scores: &[ScoreRecord], model_id: &str, metric: &str) -> Vec<f64> {
    scores
        .iter()
        .filter(|s| s.model_id == model_id)
        .filter_map(|s| match metric {
            "topicality" => Some(s.topicality),
            _ if s.refusal != Refusal::None => None,
            "composite" => s.composite,
            "partisanship" => s.partisanship,
            "objectivity" => s.objectivity,
            "sentiment" => s.sentiment,
            _ => None,
        })
        .collect()
}

/// Everything the report stage needs, computed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryBundle {
    pub weights: Weights,
    pub default_weights: bool,
    pub models: Vec<ModelSummary>,
    pub baseline: Option<Baseline>,
    pub amplification: BTreeMap<String, Amplification>,
    pub objectivity_table: ObjectivityTable,
    /// model id → metric → density samples.
    pub densities: BTreeMap<String, BTreeMap<String, Density>>,
}

/// Model ids in order of first appearance in `scores`.
pub fn model_order(scores: &[ScoreRecord]) -> Vec<String> {
    let mut seen = HashMap::new();
    let mut order = Vec::new();
    for s in scores {
        if seen.insert(s.model_id.as_str(), ()).is_none() {
            order.push(s.model_id.clone());
        }
    }
    order
}

pub fn build_bundle(
    corpus: &Corpus,
    scores: &[ScoreRecord],
    weights: Weights,
    baseline: Option<Baseline>,
) -> Result<SummaryBundle, AggregateError> {
    if scores.is_empty() {
        return Err(AggregateError::Empty);
    }
    let order = model_order(scores);
    let models = order
        .par_iter()
        .map(|m| build_model_summary(corpus, scores, m))
        .collect::<Result<Vec<_>, _>>()?;
    let mut amplifications = BTreeMap::new();
    if let Some(b) = baseline.filter(|b| b.mean_p > 0.0) {
        for summary in &models {
            if let Ok(a) = amplification(summary, b.mean_p) {
                amplifications.insert(summary.model_id.clone(), a);
            }
        }
    }
    let densities = order
        .iter()
        .map(|m| {
            let per_metric = DISTRIBUTION_METRICS
                .iter()
                .filter_map(|metric| {
                    let values = metric_values(scores, m, metric);
                    (!values.is_empty()).then(|| (metric.to_string(), Density::of(&values)))
                })
                .collect();
            (m.clone(), per_metric)
        })
        .collect();
    Ok(SummaryBundle {
        weights,
        default_weights: weights.is_default(),
        objectivity_table: objectivity_table(&models),
        models,
        baseline,
        amplification: amplifications,
        densities,
    })
}

/// Replaces characters that are unsafe in file names.
pub fn file_stem(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Combined CSV: `model_id,metric,n,mean,std,min,q1,median,q3,max`.
pub fn write_summary_csv<W: Write>(models: &[ModelSummary], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["model_id", "metric", "n", "mean", "std", "min", "q1", "median", "q3", "max"])?;
    for m in models {
        let metrics = [
            ("composite", m.composite.as_ref()),
            ("partisanship", m.partisanship.as_ref()),
            ("topicality", Some(&m.topicality)),
            ("objectivity", m.objectivity.as_ref()),
        ];
        for (name, summary) in metrics {
            let Some(s) = summary else { continue };
            let mut row = vec![m.model_id.clone(), name.to_string(), s.n.to_string()];
            row.extend([s.mean, s.std, s.min, s.q1, s.median, s.q3, s.max].iter().map(|v| format!("{v:.6}")));
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Table-4 layout with full precision: categories plus "Average" as rows,
/// models plus "Average" as columns. Missing cells are empty.
pub fn write_objectivity_csv<W: Write>(table: &ObjectivityTable, out: W, format: impl Fn(f64) -> String) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["Category".to_string()];
    header.extend(table.models.iter().cloned());
    header.push("Average".into());
    writer.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(&format).unwrap_or_default();
    for row in &table.rows {
        let mut record = vec![row.category.title().to_string()];
        record.extend(row.values.iter().map(|v| cell(*v)));
        record.push(cell(row.average));
        writer.write_record(&record)?;
    }
    let mut record = vec!["Average".to_string()];
    record.extend(table.average_row.iter().map(|v| cell(*v)));
    record.push(cell(table.overall_average));
    writer.write_record(&record)?;
    writer.flush()?;
    Ok(())
}
