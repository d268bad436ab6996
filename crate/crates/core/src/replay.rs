//! Corpus-level runs of the engine and the patience baseline.

use rayon::prelude::*;

use crate::baseline::baseline_stop_epoch;
use crate::engine::{replay_rows, EngineConfig};
use crate::error::{Error, Result};
use crate::metrics::EngineOutcome;
use crate::trace_io::TraceCorpus;

/// Replays every trace through a fresh session, in parallel. Output is in
/// model id order.
pub fn replay_corpus(corpus: &TraceCorpus, config: &EngineConfig) -> Result<Vec<EngineOutcome>> {
    config.validate()?;
    let e = config.analyzer.epochs_per_iter;
    if (e - corpus.epochs_per_iter).abs() > 1e-12 * e {
        return Err(Error::InvalidConfig(format!(
            "engine E = {e} does not match the corpus E = {}",
            corpus.epochs_per_iter
        )));
    }
    let mut out: Vec<EngineOutcome> = corpus
        .traces
        .par_iter()
        .map(|t| {
            let d = replay_rows(&t.model, t.measurements(), config)?;
            Ok(EngineOutcome {
                model: t.model.clone(),
                stop_epoch: d.stop_epoch.expect("stopped sessions carry a stop epoch"),
                estimate: d.estimate.expect("stopped sessions carry an estimate"),
                converged: d.converged,
                ground_truth_best: t.best_val_acc(),
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.model.cmp(&b.model));
    Ok(out)
}

/// Patience-baseline stop epoch for every trace, in model id order.
pub fn baseline_corpus(corpus: &TraceCorpus, patience: f64, e_max: f64) -> Result<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = corpus
        .traces
        .iter()
        .map(|t| Ok((t.model.clone(), baseline_stop_epoch(t, patience, e_max)?)))
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
