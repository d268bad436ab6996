//! Trace corpora on disk: a CSV of per-iteration measurements plus a
//! `key=value` profile sidecar next to it (`corpus.csv` -> `corpus.profile`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analyzer::DatasetProfile;
use crate::error::{Error, Result};
use crate::kv::{self, KvDoc};

const EPOCH_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub model: String,
    pub rows: Vec<TraceRow>,
    /// Name of the dataset profile the trace was recorded on.
    pub profile: String,
}

impl Trace {
    /// (epoch, val_acc, val_loss) triples in the form the engine consumes.
    pub fn measurements(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.rows.iter().map(|r| (r.epoch, r.val_acc, r.val_loss))
    }

    /// Best validation accuracy over the whole trace.
    pub fn best_val_acc(&self) -> f64 {
        self.rows.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCorpus {
    pub traces: Vec<Trace>,
    pub profile: DatasetProfile,
    pub epochs_per_iter: f64,
    /// Epoch of the last row of every trace.
    pub e_full: f64,
}

impl TraceCorpus {
    /// Checks every trace covers `E, 2E, ..., e_full` with accuracies in range.
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        check_horizon(self.epochs_per_iter, self.e_full)?;
        let expected = iterations(self.epochs_per_iter, self.e_full);
        for trace in &self.traces {
            let violation = |message: String| Error::InvariantViolation { model: trace.model.clone(), message };
            if trace.rows.len() != expected {
                return Err(violation(format!(
                    "expected {expected} rows covering epochs {}..={}, got {}",
                    self.epochs_per_iter,
                    self.e_full,
                    trace.rows.len()
                )));
            }
            for (k, row) in trace.rows.iter().enumerate() {
                let want = self.epochs_per_iter * (k + 1) as f64;
                if (row.epoch - want).abs() > EPOCH_SLACK * want.max(1.0) {
                    return Err(violation(format!("row {} has epoch {}, expected {want}", k + 1, row.epoch)));
                }
                check_row(row).map_err(violation)?;
            }
        }
        Ok(())
    }
}

fn check_horizon(epochs_per_iter: f64, e_full: f64) -> Result<()> {
    if !(epochs_per_iter > 0.0 && epochs_per_iter.is_finite()) {
        return Err(Error::InvalidConfig(format!("E must be positive, got {epochs_per_iter}")));
    }
    let k = e_full / epochs_per_iter;
    if !(k >= 1.0 - EPOCH_SLACK && (k - k.round()).abs() <= EPOCH_SLACK * k.max(1.0)) {
        return Err(Error::InvalidConfig(format!("e_full {e_full} is not a positive multiple of E = {epochs_per_iter}")));
    }
    Ok(())
}

fn iterations(epochs_per_iter: f64, e_full: f64) -> usize {
    (e_full / epochs_per_iter).round() as usize
}

fn check_row(row: &TraceRow) -> std::result::Result<(), String> {
    if !(0.0..=100.0).contains(&row.val_acc) {
        return Err(format!("val_acc {} at epoch {} is outside [0, 100]", row.val_acc, row.epoch));
    }
    if !(row.val_loss >= 0.0 && row.val_loss.is_finite()) {
        return Err(format!("val_loss {} at epoch {} is not a finite nonnegative number", row.val_loss, row.epoch));
    }
    if let Some(t) = row.train_loss {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(format!("train_loss {t} at epoch {} is not a finite nonnegative number", row.epoch));
        }
    }
    Ok(())
}

/// Sidecar profile path for a corpus CSV.
pub fn profile_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("profile")
}

const PROFILE_KEYS: [&str; 6] = ["name", "num_classes", "class_fractions", "balanced", "E", "e_full"];

/// Parses a profile sidecar into the dataset profile, E and e_full.
pub fn parse_profile(text: &str) -> Result<(DatasetProfile, f64, f64)> {
    let doc = KvDoc::parse(text)?;
    doc.reject_unknown(&PROFILE_KEYS)?;
    let name: String = doc.require("name")?;
    let num_classes: usize = doc.require("num_classes")?;
    let class_fractions = match doc.parse_list::<f64>("class_fractions")? {
        Some(f) => f,
        None if num_classes > 0 => vec![1.0 / num_classes as f64; num_classes],
        None => Vec::new(),
    };
    let profile = DatasetProfile {
        name,
        num_classes,
        balanced: doc.parse_value("balanced")?.unwrap_or_else(|| {
            class_fractions.iter().all(|&f| (f - class_fractions[0]).abs() <= 1e-9)
        }),
        class_fractions,
    };
    profile.validate()?;
    if profile.balanced && profile.class_fractions.iter().any(|&f| (f - profile.class_fractions[0]).abs() > 1e-9) {
        return Err(Error::InvalidConfig("profile is marked balanced but class fractions differ".into()));
    }
    let epochs_per_iter: f64 = doc.require("E")?;
    let e_full: f64 = doc.require("e_full")?;
    check_horizon(epochs_per_iter, e_full)?;
    Ok((profile, epochs_per_iter, e_full))
}

pub fn render_profile(profile: &DatasetProfile, epochs_per_iter: f64, e_full: f64) -> String {
    let mut doc = KvDoc::default();
    doc.push("name", &profile.name);
    doc.push("num_classes", profile.num_classes);
    doc.push("class_fractions", kv::join(&profile.class_fractions));
    doc.push("balanced", profile.balanced);
    doc.push("E", epochs_per_iter);
    doc.push("e_full", e_full);
    doc.to_string()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_number(field: &str, column: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|e| Error::Parse { line, message: format!("{column}: {e} ({field:?})") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("{column}: non-finite value {field:?}") });
    }
    Ok(v)
}

/// Reads traces from CSV text. Rows of each model must appear in increasing
/// epoch order; models may interleave. Traces come back sorted by model id.
pub fn parse_traces(text: &str, profile_name: &str) -> Result<Vec<Trace>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing = |name: &str| Error::Parse { line: 1, message: format!("missing column {name:?}") };
    let model_col = column("model_id").ok_or_else(|| missing("model_id"))?;
    let epoch_col = column("epoch").ok_or_else(|| missing("epoch"))?;
    let acc_col = column("val_acc").ok_or_else(|| missing("val_acc"))?;
    let loss_col = column("val_loss").ok_or_else(|| missing("val_loss"))?;
    let train_col = column("train_loss");

    let mut by_model: BTreeMap<String, Vec<TraceRow>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let model = field(model_col).trim().to_string();
        if model.is_empty() {
            return Err(Error::Parse { line, message: "empty model_id".into() });
        }
        let train_loss = match train_col.map(|i| field(i).trim()) {
            None | Some("") => None,
            Some(v) => Some(parse_number(v, "train_loss", line)?),
        };
        let row = TraceRow {
            epoch: parse_number(field(epoch_col), "epoch", line)?,
            val_acc: parse_number(field(acc_col), "val_acc", line)?,
            val_loss: parse_number(field(loss_col), "val_loss", line)?,
            train_loss,
        };
        let rows = by_model.entry(model.clone()).or_default();
        if let Some(prev) = rows.last() {
            if row.epoch <= prev.epoch {
                return Err(Error::InvariantViolation {
                    model,
                    message: format!("epoch {} at line {line} does not follow epoch {}", row.epoch, prev.epoch),
                });
            }
        }
        check_row(&row).map_err(|message| Error::InvariantViolation { model: model.clone(), message })?;
        rows.push(row);
    }
    Ok(by_model
        .into_iter()
        .map(|(model, rows)| Trace { model, rows, profile: profile_name.to_string() })
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn render_traces(traces: &[Trace]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_id", "epoch", "val_acc", "val_loss", "train_loss"]).expect("in-memory write");
    for t in traces {
        for r in &t.rows {
            w.write_record([
                t.model.clone(),
                r.epoch.to_string(),
                r.val_acc.to_string(),
                r.val_loss.to_string(),
                fmt_opt(r.train_loss),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn load_corpus(path: &Path) -> Result<TraceCorpus> {
    let (profile, epochs_per_iter, e_full) = parse_profile(&read(&profile_path(path))?)?;
    let traces = parse_traces(&read(path)?, &profile.name)?;
    let corpus = TraceCorpus { traces, profile, epochs_per_iter, e_full };
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &TraceCorpus, path: &Path) -> Result<()> {
    let mut traces = corpus.traces.clone();
    traces.sort_by(|a, b| a.model.cmp(&b.model));
    write_file(path, &render_traces(&traces))?;
    let sidecar = profile_path(path);
    write_file(&sidecar, &render_profile(&corpus.profile, corpus.epochs_per_iter, corpus.e_full))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROFILE: &str = "name=toy\nnum_classes=10\nclass_fractions=0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1\nbalanced=true\nE=0.5\ne_full=1.5\n";

    #[test]
    fn profile_round_trip() {
        let (p, e, full) = parse_profile(PROFILE).unwrap();
        assert!(p.balanced);
        assert_eq!((e, full), (0.5, 1.5));
        assert_eq!(render_profile(&p, e, full), PROFILE);
    }

    #[test]
    fn profile_errors() {
        assert!(parse_profile("name=x\nnum_classes=2\nE=0.5\ne_full=1.25\n").is_err());
        assert!(parse_profile("name=x\nnum_classes=2\nclass_fractions=0.3,0.7\nbalanced=true\nE=0.5\ne_full=1\n").is_err());
        assert!(parse_profile("name=x\nnum_classes=2\nE=0.5\ne_full=1\nextra=1\n").is_err());
        let (p, _, _) = parse_profile("name=x\nnum_classes=2\nclass_fractions=0.3,0.7\nE=0.5\ne_full=1\n").unwrap();
        assert!(!p.balanced);
    }

    #[test]
    fn interleaved_models_are_grouped_and_sorted() {
        let csv = "model_id,epoch,val_acc,val_loss,train_loss\nb,0.5,10,2,\na,0.5,11,2,1.5\nb,1,12,1.9,\na,1,13,1.8,1.4\n";
        let traces = parse_traces(csv, "toy").unwrap();
        assert_eq!(traces.iter().map(|t| t.model.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(traces[0].rows[1].train_loss, Some(1.4));
        assert_eq!(traces[1].rows[0].train_loss, None);
    }

    #[test]
    fn row_errors() {
        let bad_number = "model_id,epoch,val_acc,val_loss\na,0.5,x,2\n";
        assert!(matches!(parse_traces(bad_number, "p"), Err(Error::Parse { line: 2, .. })));
        let backwards = "model_id,epoch,val_acc,val_loss\na,1,10,2\na,0.5,10,2\n";
        assert!(matches!(parse_traces(backwards, "p"), Err(Error::InvariantViolation { model, .. }) if model == "a"));
        let range = "model_id,epoch,val_acc,val_loss\na,0.5,100.5,2\n";
        assert!(matches!(parse_traces(range, "p"), Err(Error::InvariantViolation { .. })));
        assert!(matches!(parse_traces("model_id,epoch,val_acc\n", "p"), Err(Error::Parse { line: 1, .. })));
    }
}
