//! The patience rule used for comparison: train to `e_max`, stopping earlier
//! once the minimum training loss has not decreased for `patience` epochs.

use crate::error::{Error, Result};
use crate::trace_io::Trace;

pub const DEFAULT_PATIENCE: f64 = 10.0;
pub const DEFAULT_E_MAX: f64 = 20.0;

/// First epoch at which the running minimum of `train_loss` was set at least
/// `patience` epochs earlier, or `e_max` if that never happens before it.
/// Only a strict decrease resets the minimum.
pub fn baseline_stop_epoch(trace: &Trace, patience: f64, e_max: f64) -> Result<f64> {
    if !(patience > 0.0 && patience.is_finite()) {
        return Err(Error::InvalidConfig(format!("patience must be positive, got {patience}")));
    }
    if !(e_max > 0.0 && e_max.is_finite()) {
        return Err(Error::InvalidConfig(format!("e_max must be positive, got {e_max}")));
    }
    let mut losses = Vec::with_capacity(trace.rows.len());
    for row in &trace.rows {
        losses.push(row.train_loss.ok_or_else(|| Error::MissingTrainLoss(trace.model.clone()))?);
    }

    let slack = 1e-9 * e_max;
    let mut best = f64::INFINITY;
    let mut best_epoch = 0.0;
    for (row, &loss) in trace.rows.iter().zip(&losses) {
        if row.epoch > e_max + slack {
            break;
        }
        if loss < best {
            best = loss;
            best_epoch = row.epoch;
        } else if row.epoch - best_epoch >= patience - slack {
            return Ok(row.epoch);
        }
    }
    Ok(e_max)
}
