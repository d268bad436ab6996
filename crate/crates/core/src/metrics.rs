//! Evaluation quantities comparing engine stops and estimates to the patience
//! baseline and to the best accuracy actually reached.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::trace_io::write_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: String,
    pub engine_stop: f64,
    pub engine_estimate: f64,
    pub engine_converged: bool,
    pub baseline_stop: f64,
    /// Best validation accuracy over the full horizon.
    pub ground_truth_best: f64,
}

/// Percent of baseline epochs the engine saved on one model; negative when
/// the engine ran longer.
pub fn epochs_saved_for(o: &ModelOutcome) -> f64 {
    100.0 * (o.baseline_stop - o.engine_stop) / o.baseline_stop
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochsSaved {
    pub per_model: Vec<(String, f64)>,
    pub mean: f64,
}

pub fn epochs_saved(outcomes: &[ModelOutcome]) -> Result<EpochsSaved> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let per_model: Vec<(String, f64)> = outcomes.iter().map(|o| (o.model.clone(), epochs_saved_for(o))).collect();
    let mean = per_model.iter().map(|(_, s)| s).sum::<f64>() / per_model.len() as f64;
    Ok(EpochsSaved { per_model, mean })
}

/// Total baseline epochs over total engine epochs.
pub fn throughput_gain(outcomes: &[ModelOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let baseline: f64 = outcomes.iter().map(|o| o.baseline_stop).sum();
    let engine: f64 = outcomes.iter().map(|o| o.engine_stop).sum();
    Ok(baseline / engine)
}

/// Size of the top `x` percent of `n` models: `round(x/100 * n)`, at least 1.
pub fn top_k(n: usize, x: f64) -> usize {
    ((x / 100.0 * n as f64).round() as usize).clamp(1, n.max(1))
}

fn check_percent(x: f64) -> Result<()> {
    if x > 0.0 && x <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("top percentage must be in (0, 100], got {x}")))
    }
}

/// Indices of the `k` best outcomes by `key`, ties broken by model id.
fn top_indices(outcomes: &[ModelOutcome], k: usize, key: impl Fn(&ModelOutcome) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..outcomes.len()).collect();
    idx.sort_by(|&i, &j| {
        key(&outcomes[j])
            .total_cmp(&key(&outcomes[i]))
            .then_with(|| outcomes[i].model.cmp(&outcomes[j].model))
    });
    idx.truncate(k);
    idx
}

/// Ground-truth best and predicted best sets for the top `x` percent.
pub fn top_sets(outcomes: &[ModelOutcome], x: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_percent(x)?;
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let k = top_k(outcomes.len(), x);
    Ok((
        top_indices(outcomes, k, |o| o.ground_truth_best),
        top_indices(outcomes, k, |o| o.engine_estimate),
    ))
}

/// Fraction of the ground-truth top `x` percent that the estimates also rank
/// in their top `x` percent.
pub fn top_overlap(outcomes: &[ModelOutcome], x: f64) -> Result<f64> {
    let (truth, predicted) = top_sets(outcomes, x)?;
    let shared = truth.iter().filter(|i| predicted.contains(i)).count();
    Ok(shared as f64 / truth.len() as f64)
}

/// Gap between the mean true accuracy of the true top set and of the
/// predicted top set.
pub fn mean_accuracy_diff(outcomes: &[ModelOutcome], x: f64) -> Result<f64> {
    let (truth, predicted) = top_sets(outcomes, x)?;
    let mean = |set: &[usize]| set.iter().map(|&i| outcomes[i].ground_truth_best).sum::<f64>() / set.len() as f64;
    Ok((mean(&truth) - mean(&predicted)).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub mean: f64,
}

/// Percentile of sorted data with linear interpolation between ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn distribution_summary(values: &[f64]) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("distribution values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DistributionSummary {
        p5: percentile(&sorted, 5.0),
        p25: percentile(&sorted, 25.0),
        p50: percentile(&sorted, 50.0),
        p75: percentile(&sorted, 75.0),
        p95: percentile(&sorted, 95.0),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 10.0;

/// Counts savings percentages in 10-point bins over [-100, 100]. Bins are
/// half-open except the last; values outside the range land in the end bins.
pub fn savings_histogram(values: &[f64]) -> Vec<HistogramBin> {
    let nbins = (200.0 / HISTOGRAM_BIN_WIDTH) as usize;
    let mut bins: Vec<HistogramBin> = (0..nbins)
        .map(|i| {
            let lo = -100.0 + HISTOGRAM_BIN_WIDTH * i as f64;
            HistogramBin { lo, hi: lo + HISTOGRAM_BIN_WIDTH, count: 0 }
        })
        .collect();
    for &v in values {
        let i = ((v + 100.0) / HISTOGRAM_BIN_WIDTH).floor();
        let i = if i.is_nan() { 0 } else { (i.max(0.0) as usize).min(nbins - 1) };
        bins[i].count += 1;
    }
    bins
}

pub fn render_histogram(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        out.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopRow {
    pub percent: f64,
    pub k: usize,
    pub overlap: f64,
    pub mean_accuracy_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub models: usize,
    pub converged: usize,
    pub epochs_saved: DistributionSummary,
    pub throughput_gain: f64,
    pub top: Vec<TopRow>,
    pub histogram: Vec<HistogramBin>,
}

pub fn report(outcomes: &[ModelOutcome], top_percents: &[f64]) -> Result<MetricsReport> {
    let saved = epochs_saved(outcomes)?;
    let values: Vec<f64> = saved.per_model.iter().map(|(_, s)| *s).collect();
    let mut top = Vec::with_capacity(top_percents.len());
    for &x in top_percents {
        top.push(TopRow {
            percent: x,
            k: top_k(outcomes.len(), x),
            overlap: top_overlap(outcomes, x)?,
            mean_accuracy_diff: mean_accuracy_diff(outcomes, x)?,
        });
    }
    Ok(MetricsReport {
        models: outcomes.len(),
        converged: outcomes.iter().filter(|o| o.engine_converged).count(),
        epochs_saved: distribution_summary(&values)?,
        throughput_gain: throughput_gain(outcomes)?,
        top,
        histogram: savings_histogram(&values),
    })
}

impl MetricsReport {
    pub fn to_kv(&self) -> String {
        let mut doc = KvDoc::default();
        doc.push("models", self.models);
        doc.push("converged", self.converged);
        doc.push("epochs_saved_mean", self.epochs_saved.mean);
        doc.push("epochs_saved_p5", self.epochs_saved.p5);
        doc.push("epochs_saved_p25", self.epochs_saved.p25);
        doc.push("epochs_saved_p50", self.epochs_saved.p50);
        doc.push("epochs_saved_p75", self.epochs_saved.p75);
        doc.push("epochs_saved_p95", self.epochs_saved.p95);
        doc.push("throughput_gain", self.throughput_gain);
        for row in &self.top {
            doc.push(format!("top{}_k", row.percent), row.k);
            doc.push(format!("top{}_overlap", row.percent), row.overlap);
            doc.push(format!("top{}_mean_accuracy_diff", row.percent), row.mean_accuracy_diff);
        }
        doc.to_string()
    }

    /// Overlap and accuracy-difference table, one row per top percentage.
    pub fn top_table_csv(&self) -> String {
        let mut out = String::from("top_percent,k,overlap,mean_accuracy_diff\n");
        for r in &self.top {
            out.push_str(&format!("{},{},{},{}\n", r.percent, r.k, r.overlap, r.mean_accuracy_diff));
        }
        out
    }
}

/// One row of the replay output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineOutcome {
    pub model: String,
    pub stop_epoch: f64,
    pub estimate: f64,
    pub converged: bool,
    pub ground_truth_best: f64,
}

const ENGINE_HEADER: [&str; 5] = ["model", "stop_epoch", "estimate", "converged", "ground_truth_best"];
const BASELINE_HEADER: [&str; 2] = ["model", "baseline_stop"];

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { line, message: e.to_string() }
}

fn read_rows(text: &str, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found = reader.headers().map_err(csv_error)?;
    if found.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", header.join(",")) });
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(csv_error)?;
            Ok((r.position().map_or(0, |p| p.line()), r))
        })
        .collect()
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = record.get(i).unwrap_or("").trim();
    raw.parse().map_err(|e| Error::Parse { line, message: format!("{name}: {e} ({raw:?})") })
}

pub fn render_engine_outcomes(rows: &[EngineOutcome]) -> String {
    let mut out = ENGINE_HEADER.join(",") + "\n";
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.model, r.stop_epoch, r.estimate, r.converged, r.ground_truth_best));
    }
    out
}

pub fn parse_engine_outcomes(text: &str) -> Result<Vec<EngineOutcome>> {
    read_rows(text, &ENGINE_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(EngineOutcome {
                model: field(&r, 0, "model", line)?,
                stop_epoch: field(&r, 1, "stop_epoch", line)?,
                estimate: field(&r, 2, "estimate", line)?,
                converged: field(&r, 3, "converged", line)?,
                ground_truth_best: field(&r, 4, "ground_truth_best", line)?,
            })
        })
        .collect()
}

pub fn render_baseline(rows: &[(String, f64)]) -> String {
    let mut out = BASELINE_HEADER.join(",") + "\n";
    for (model, stop) in rows {
        out.push_str(&format!("{model},{stop}\n"));
    }
    out
}

pub fn parse_baseline(text: &str) -> Result<Vec<(String, f64)>> {
    read_rows(text, &BASELINE_HEADER)?
        .into_iter()
        .map(|(line, r)| Ok((field(&r, 0, "model", line)?, field(&r, 1, "baseline_stop", line)?)))
        .collect()
}

/// Pairs replay and baseline rows by model id; both must cover the same models.
pub fn join_outcomes(engine: &[EngineOutcome], baseline: &[(String, f64)]) -> Result<Vec<ModelOutcome>> {
    let mut stops: BTreeMap<&str, f64> = BTreeMap::new();
    for (model, stop) in baseline {
        if stops.insert(model, *stop).is_some() {
            return Err(Error::InvalidInput(format!("model {model:?} appears twice in the baseline")));
        }
    }
    if stops.len() != engine.len() {
        return Err(Error::InvalidInput(format!(
            "baseline covers {} models but replay covers {}",
            stops.len(),
            engine.len()
        )));
    }
    let mut out: Vec<ModelOutcome> = engine
        .iter()
        .map(|e| {
            let baseline_stop = *stops
                .get(e.model.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("model {:?} has no baseline stop", e.model)))?;
            Ok(ModelOutcome {
                model: e.model.clone(),
                engine_stop: e.stop_epoch,
                engine_estimate: e.estimate,
                engine_converged: e.converged,
                baseline_stop,
                ground_truth_best: e.ground_truth_best,
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.model.cmp(&b.model));
    for o in &out {
        if !(o.engine_stop > 0.0 && o.baseline_stop > 0.0) {
            return Err(Error::InvalidInput(format!("model {:?} has a non-positive stop epoch", o.model)));
        }
    }
    Ok(out)
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    write_file(path, &report.to_kv())
}
