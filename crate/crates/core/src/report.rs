//! Report rendering: compass plots, violin plots, CSV tables, and a markdown
//! summary. Everything here formats numbers computed by [`crate::aggregate`];
//! nothing is recomputed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::aggregate::{file_stem, write_objectivity_csv, Density, DistributionSummary, ModelSummary, SummaryBundle};
use crate::corpus::Refusal;
use crate::metrics::ScoreRecord;

/// Model colors in configured order; black is reserved for the prompt baseline.
pub const PALETTE: [&str; 6] = ["#00008b", "#ff0000", "#ffa500", "#008000", "#8f00ff", "#87ceeb"];
pub const BASELINE_COLOR: &str = "#000000";

/// 4 significant digits, e.g. `0.2360`, `-0.09420`, `12.67`.
pub fn format_sig4(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return if value.is_finite() { "0.000".into() } else { value.to_string() };
    }
    let exponent = value.abs().log10().floor() as i32;
    let decimals = (3 - exponent).max(0) as usize;
    let text = format!("{value:.decimals$}");
    // Rounding can carry into a new leading digit (9.9996 -> 10.000).
    let carried = text.trim_start_matches('-').parse::<f64>().unwrap_or(0.0) >= 10f64.powi(exponent + 1);
    let text = if carried && decimals > 0 { format!("{value:.prec$}", prec = decimals - 1) } else { text };
    if text.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        text.trim_start_matches('-').to_string()
    } else {
        text
    }
}

/// Fraction as a percentage with 4 significant digits and trailing zeros
/// dropped: `1.0 -> "100%"`, `38/300 -> "12.67%"`.
pub fn format_percent(fraction: f64) -> String {
    let text = format_sig4(fraction * 100.0);
    let text = if text.contains('.') { text.trim_end_matches('0').trim_end_matches('.').to_string() } else { text };
    format!("{text}%")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Response,
    ModelMean,
    PromptBaseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompassPoint {
    pub a: f64,
    pub b: f64,
    pub model_id: String,
    pub kind: PointKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompassPlotSpec {
    pub title: String,
    pub points: Vec<CompassPoint>,
    /// Model id and color, in legend order.
    pub color_map: Vec<(String, String)>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlotError {
    #[error("point ({a}, {b}) for {model_id} lies outside [-1, 1]^2")]
    OutOfRange { a: f64, b: f64, model_id: String },
    #[error("no color assigned to model {0:?}")]
    MissingColor(String),
}

impl CompassPlotSpec {
    /// Assigns palette colors to `models` in order, cycling past six.
    pub fn new(title: impl Into<String>, models: &[String], points: Vec<CompassPoint>) -> Result<Self, PlotError> {
        let color_map = models
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), PALETTE[i % PALETTE.len()].to_string()))
            .collect();
        let spec = Self { title: title.into(), points, color_map };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PlotError> {
        for p in &self.points {
            if !(p.a.abs() <= 1.0 && p.b.abs() <= 1.0) {
                return Err(PlotError::OutOfRange { a: p.a, b: p.b, model_id: p.model_id.clone() });
            }
            if p.kind != PointKind::PromptBaseline && !self.color_map.iter().any(|(m, _)| *m == p.model_id) {
                return Err(PlotError::MissingColor(p.model_id.clone()));
            }
        }
        Ok(())
    }

    fn color(&self, point: &CompassPoint) -> &str {
        if point.kind == PointKind::PromptBaseline {
            return BASELINE_COLOR;
        }
        self.color_map.iter().find(|(m, _)| *m == point.model_id).map_or(BASELINE_COLOR, |(_, c)| c.as_str())
    }
}

const COMPASS_SIZE: f64 = 600.0;
const COMPASS_MARGIN: f64 = 60.0;
const LEGEND_WIDTH: f64 = 220.0;

/// Pixel position of compass coordinates: x grows rightward, authoritarian up.
pub fn compass_position(a: f64, b: f64) -> (f64, f64) {
    let half = (COMPASS_SIZE - 2.0 * COMPASS_MARGIN) / 2.0;
    let center = COMPASS_SIZE / 2.0;
    (center + a * half, center - b * half)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_compass(spec: &CompassPlotSpec) -> String {
    let width = COMPASS_SIZE + LEGEND_WIDTH;
    let (lo, hi) = (COMPASS_MARGIN, COMPASS_SIZE - COMPASS_MARGIN);
    let mid = COMPASS_SIZE / 2.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{COMPASS_SIZE}" viewBox="0 0 {width} {COMPASS_SIZE}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{COMPASS_SIZE}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{mid}" y="24" text-anchor="middle" font-size="16">{}</text>"#, escape(&spec.title));
    let _ = writeln!(svg, r##"<rect x="{lo}" y="{lo}" width="{0}" height="{0}" fill="none" stroke="#999"/>"##, hi - lo);
    let _ = writeln!(svg, r#"<line x1="{lo}" y1="{mid}" x2="{hi}" y2="{mid}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{mid}" y1="{lo}" x2="{mid}" y2="{hi}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<text x="{lo}" y="{}" font-size="12">Left</text>"#, mid - 6.0);
    let _ = writeln!(svg, r#"<text x="{hi}" y="{}" font-size="12" text-anchor="end">Right</text>"#, mid - 6.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12">Authoritarian</text>"#, mid + 6.0, lo + 14.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12">Libertarian</text>"#, mid + 6.0, hi - 6.0);
    for (value, label) in [(-1.0, "-1"), (1.0, "1")] {
        let (x, _) = compass_position(value, 0.0);
        let (_, y) = compass_position(0.0, value);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" font-size="10" text-anchor="middle">{label}</text>"#, hi + 14.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{y:.2}" font-size="10" text-anchor="end">{label}</text>"#, lo - 4.0);
    }
    let layers = [PointKind::Response, PointKind::ModelMean, PointKind::PromptBaseline];
    for layer in layers {
        for p in spec.points.iter().filter(|p| p.kind == layer) {
            let (x, y) = compass_position(p.a, p.b);
            let color = spec.color(p);
            let _ = match layer {
                PointKind::Response => {
                    writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}" fill-opacity="0.35"/>"#)
                }
                _ => writeln!(
                    svg,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="7" fill="{color}" stroke="black" stroke-width="1"/>"#
                ),
            };
        }
    }
    let mut legend: Vec<(String, &str)> = spec.color_map.iter().map(|(m, c)| (m.clone(), c.as_str())).collect();
    if spec.points.iter().any(|p| p.kind == PointKind::PromptBaseline) {
        legend.push(("Prompts".into(), BASELINE_COLOR));
    }
    for (i, (label, color)) in legend.iter().enumerate() {
        let y = COMPASS_MARGIN + 10.0 + 22.0 * i as f64;
        let x = COMPASS_SIZE + 10.0;
        let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="6" fill="{color}"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12">{}</text>"#, x + 12.0, y + 4.0, escape(label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn metric_range(metric: &str) -> (f64, f64) {
    match metric {
        "partisanship" => (0.0, std::f64::consts::SQRT_2),
        "sentiment" => (-1.0, 1.0),
        _ => (0.0, 1.0),
    }
}

fn metric_summary<'a>(summary: &'a ModelSummary, metric: &str) -> Option<&'a DistributionSummary> {
    match metric {
        "composite" => summary.composite.as_ref(),
        "partisanship" => summary.partisanship.as_ref(),
        "topicality" => Some(&summary.topicality),
        "objectivity" => summary.objectivity.as_ref(),
        _ => None,
    }
}

/// Violin plot of one metric with one column per model. Curves are mirrored
/// about the column axis; degenerate distributions show as a point strip.
pub fn render_violin(bundle: &SummaryBundle, metric: &str) -> String {
    let models: Vec<&ModelSummary> = bundle.models.iter().collect();
    let column = 120.0;
    let (top, bottom, left) = (40.0, 420.0, 60.0);
    let width = left + column * models.len().max(1) as f64 + 20.0;
    let height = bottom + 60.0;
    let (mut lo, mut hi) = metric_range(metric);
    for m in &models {
        if let Some(Density::Curve(curve)) = bundle.densities.get(&m.model_id).and_then(|d| d.get(metric)) {
            lo = lo.min(curve[0].0);
            hi = hi.max(curve[curve.len() - 1].0);
        }
    }
    let y_of = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, width / 2.0, escape(metric));
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
    for tick in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            left - 4.0,
            y_of(tick) + 3.0,
            format_sig4(tick)
        );
    }
    for (i, m) in models.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = left + column * (i as f64 + 0.5);
        match bundle.densities.get(&m.model_id).and_then(|d| d.get(metric)) {
            Some(Density::Curve(curve)) => {
                let peak = curve.iter().map(|(_, d)| *d).fold(0.0, f64::max);
                let scale = if peak > 0.0 { column * 0.42 / peak } else { 0.0 };
                let right: Vec<String> =
                    curve.iter().map(|(x, d)| format!("{:.2},{:.2}", cx + d * scale, y_of(*x))).collect();
                let left_side: Vec<String> =
                    curve.iter().rev().map(|(x, d)| format!("{:.2},{:.2}", cx - d * scale, y_of(*x))).collect();
                let _ = writeln!(
                    svg,
                    r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.4" stroke="{color}"/>"#,
                    right.join(" "),
                    left_side.join(" ")
                );
            }
            Some(Density::Strip(values)) => {
                for v in values {
                    let _ = writeln!(svg, r#"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, y_of(*v));
                }
            }
            None => {}
        }
        if let Some(s) = metric_summary(m, metric) {
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="8" height="{:.2}" fill="white" stroke="black"/>"#,
                cx - 4.0,
                y_of(s.q3),
                y_of(s.q1) - y_of(s.q3)
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                cx - 6.0,
                y_of(s.median),
                cx + 6.0,
                y_of(s.median)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            bottom + 20.0,
            escape(&m.model_id)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn csv_string(rows: &[Vec<String>]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.write_record(row).expect("in-memory csv");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn markdown_table(rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let _ = writeln!(out, "| {} |", row.join(" | "));
        if i == 0 {
            let _ = writeln!(out, "|{}", "---|".repeat(row.len()));
        }
    }
    out
}

pub const SENTIMENT_COLUMNS: [&str; 4] =
    ["Positive Sentiment Power", "Negative Sentiment Power", "Net Sentiment Vector", "Net Sentiment Magnitude"];

pub fn response_rate_rows(models: &[ModelSummary]) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["Model".to_string(), "Response Rate".to_string()]];
    rows.extend(models.iter().map(|m| vec![m.model_id.clone(), format_percent(m.response_rate)]));
    rows
}

pub fn sentiment_rows(models: &[ModelSummary]) -> Vec<Vec<String>> {
    let mut header = vec!["Model".to_string()];
    header.extend(SENTIMENT_COLUMNS.iter().map(|c| c.to_string()));
    let mut rows = vec![header];
    for m in models {
        let mut row = vec![m.model_id.clone()];
        match &m.sentiment {
            Some(s) => row.extend(
                [s.positive_power, s.negative_power, s.net_vector, s.net_magnitude].iter().map(|v| format_sig4(*v)),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        rows.push(row);
    }
    rows
}

pub fn objectivity_rows(bundle: &SummaryBundle) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    write_objectivity_csv(&bundle.objectivity_table, &mut out, format_sig4).expect("in-memory csv");
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(out.as_slice());
    reader
        .records()
        .map(|r| r.expect("in-memory csv").iter().map(str::to_string).collect())
        .collect()
}

fn distribution_rows(bundle: &SummaryBundle) -> Vec<Vec<String>> {
    let mut rows = vec![["Model", "Metric", "n", "Mean", "Std", "Min", "Q1", "Median", "Q3", "Max", "Outliers"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for m in &bundle.models {
        for metric in ["composite", "partisanship", "topicality", "objectivity"] {
            let Some(s) = metric_summary(m, metric) else { continue };
            let mut row = vec![m.model_id.clone(), metric.to_string(), s.n.to_string()];
            row.extend([s.mean, s.std, s.min, s.q1, s.median, s.q3, s.max].iter().map(|v| format_sig4(*v)));
            row.push(s.outliers.len().to_string());
            rows.push(row);
        }
    }
    rows
}

/// Compass specs for individual responses (with model means) and for means only.
pub fn compass_specs(bundle: &SummaryBundle, scores: &[ScoreRecord]) -> Result<(CompassPlotSpec, CompassPlotSpec), PlotError> {
    let models: Vec<String> = bundle.models.iter().map(|m| m.model_id.clone()).collect();
    let means: Vec<CompassPoint> = bundle
        .models
        .iter()
        .filter_map(|m| {
            m.mean_polarity.map(|p| CompassPoint { a: p.a, b: p.b, model_id: m.model_id.clone(), kind: PointKind::ModelMean })
        })
        .chain(bundle.baseline.map(|b| CompassPoint {
            a: b.mean_a,
            b: b.mean_b,
            model_id: "prompts".into(),
            kind: PointKind::PromptBaseline,
        }))
        .collect();
    let responses = scores.iter().filter(|s| s.refusal == Refusal::None).filter_map(|s| {
        s.polarity.map(|p| CompassPoint { a: p.a, b: p.b, model_id: s.model_id.clone(), kind: PointKind::Response })
    });
    let all = responses.chain(means.iter().cloned()).collect();
    Ok((
        CompassPlotSpec::new("Response positions", &models, all)?,
        CompassPlotSpec::new("Mean positions", &models, means)?,
    ))
}

fn weights_line(bundle: &SummaryBundle) -> String {
    let w = bundle.weights;
    format!(
        "partisanship {}, topicality {}, sentiment {}, objectivity {}",
        w.partisanship, w.topicality, w.sentiment, w.objectivity
    )
}

pub fn render_markdown(bundle: &SummaryBundle) -> String {
    let mut md = String::from("# Bias audit report\n\n");
    if bundle.default_weights {
        let _ = writeln!(md, "Composite weights: {} (defaults).\n", weights_line(bundle));
    } else {
        let _ = writeln!(md, "> **Non-default weights:** {}.\n", weights_line(bundle));
    }
    md.push_str("## Political compass\n\n![Responses](compass.svg)\n\n![Means](compass_means.svg)\n\n");
    if let Some(b) = bundle.baseline {
        let _ = writeln!(
            md,
            "Prompt baseline over {} prompts: A = {}, B = {}, mean P = {}.\n",
            b.n,
            format_sig4(b.mean_a),
            format_sig4(b.mean_b),
            format_sig4(b.mean_p)
        );
    }
    if !bundle.amplification.is_empty() {
        let mut rows = vec![vec!["Model".to_string(), "Amplification".to_string(), "Amplified".to_string()]];
        for m in &bundle.models {
            if let Some(a) = bundle.amplification.get(&m.model_id) {
                rows.push(vec![m.model_id.clone(), format_sig4(a.ratio), if a.amplified { "yes" } else { "no" }.into()]);
            }
        }
        md.push_str(&markdown_table(&rows));
        md.push('\n');
    }
    md.push_str("## Response rates\n\n");
    md.push_str(&markdown_table(&response_rate_rows(&bundle.models)));
    md.push_str("\n## Sentiment\n\n");
    md.push_str(&markdown_table(&sentiment_rows(&bundle.models)));
    md.push_str("\n## Objectivity by category\n\n");
    md.push_str(&markdown_table(&objectivity_rows(bundle)));
    md.push_str("\n## Distributions\n\n");
    md.push_str(&markdown_table(&distribution_rows(bundle)));
    md.push('\n');
    for metric in crate::aggregate::DISTRIBUTION_METRICS {
        let _ = writeln!(md, "![{metric}](violin_{metric}.svg)\n");
    }
    md
}

fn density_csv(density: &Density) -> String {
    match density {
        Density::Curve(curve) => {
            let mut rows = vec![vec!["x".to_string(), "density".to_string()]];
            rows.extend(curve.iter().map(|(x, d)| vec![format!("{x:.6}"), format!("{d:.6}")]));
            csv_string(&rows)
        }
        Density::Strip(values) => {
            let mut rows = vec![vec!["value".to_string()]];
            rows.extend(values.iter().map(|v| vec![format!("{v:.6}")]));
            csv_string(&rows)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("summary bundle has no models")]
    Empty,
}

/// Writes every report artifact under `dir` and returns the paths written.
pub fn write_report(bundle: &SummaryBundle, scores: &[ScoreRecord], dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    if bundle.models.is_empty() {
        return Err(ReportError::Empty);
    }
    let (compass, means) = compass_specs(bundle, scores)?;
    let mut files: BTreeMap<PathBuf, String> = BTreeMap::new();
    files.insert("compass.svg".into(), render_compass(&compass));
    files.insert("compass_means.svg".into(), render_compass(&means));
    files.insert("table2_response_rates.csv".into(), csv_string(&response_rate_rows(&bundle.models)));
    files.insert("table3_sentiment.csv".into(), csv_string(&sentiment_rows(&bundle.models)));
    files.insert("table4_objectivity.csv".into(), csv_string(&objectivity_rows(bundle)));
    files.insert("summary.md".into(), render_markdown(bundle));
    for metric in crate::aggregate::DISTRIBUTION_METRICS {
        files.insert(format!("violin_{metric}.svg").into(), render_violin(bundle, metric));
    }
    for (model, per_metric) in &bundle.densities {
        for (metric, density) in per_metric {
            files.insert(
                Path::new("distributions").join(format!("{metric}_{}.csv", file_stem(model))),
                density_csv(density),
            );
        }
    }
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    let dist = dir.join("distributions");
    fs::create_dir_all(&dist).map_err(io_err(&dist))?;
    let mut written = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
