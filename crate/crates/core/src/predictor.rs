//! Per-model performance history and the per-iteration asymptote prediction.

use serde::{Deserialize, Serialize};

use crate::curve_model::ParamBox;
use crate::error::{Error, Result};
use crate::fitter::{fit, FitConfig, FitResult, FitStatus};

/// Relative slack when checking that an epoch is a whole multiple of E.
const EPOCH_SLACK: f64 = 1e-9;

/// One validation measurement, plus the asymptote predicted from the history
/// up to and including it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTuple {
    pub model: String,
    pub epoch: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub prediction: Option<f64>,
}

/// Epoch-ordered measurements for a single model, spaced by `epochs_per_iter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    model: String,
    epochs_per_iter: f64,
    tuples: Vec<PerformanceTuple>,
}

impl History {
    pub fn new(model: impl Into<String>, epochs_per_iter: f64) -> Result<Self> {
        if !(epochs_per_iter > 0.0 && epochs_per_iter.is_finite()) {
            return Err(Error::InvalidConfig(format!("epochs per iteration must be positive, got {epochs_per_iter}")));
        }
        Ok(Self { model: model.into(), epochs_per_iter, tuples: Vec::new() })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn epochs_per_iter(&self) -> f64 {
        self.epochs_per_iter
    }

    pub fn tuples(&self) -> &[PerformanceTuple] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn last(&self) -> Option<&PerformanceTuple> {
        self.tuples.last()
    }

    /// The epoch the next measurement must carry.
    pub fn next_epoch(&self) -> f64 {
        self.epochs_per_iter * (self.tuples.len() + 1) as f64
    }

    pub fn max_val_acc(&self) -> Option<f64> {
        self.tuples.iter().map(|t| t.val_acc).reduce(f64::max)
    }

    /// Appends a measurement and, once at least `cfg.c_min` are present, fits
    /// the curve to the rescaled history and stores the fitted asymptote on
    /// the new tuple. Earlier tuples are never touched.
    ///
    /// Returns the fit diagnostics when a fit ran. A degenerate fit leaves the
    /// new tuple without a prediction.
    pub fn record_and_predict(
        &mut self,
        epoch: f64,
        val_acc: f64,
        val_loss: f64,
        bx: &ParamBox,
        cfg: &FitConfig,
    ) -> Result<Option<FitResult>> {
        for (name, v) in [("epoch", epoch), ("val_acc", val_acc), ("val_loss", val_loss)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteInput(format!("{name} = {v}")));
            }
        }
        let expected = self.next_epoch();
        if (epoch - expected).abs() > EPOCH_SLACK * expected.max(1.0) {
            return Err(Error::OutOfOrderEpoch { expected, got: epoch });
        }
        if !(0.0..=100.0).contains(&val_acc) {
            return Err(Error::InvalidInput(format!("val_acc must be in [0, 100], got {val_acc}")));
        }
        if val_loss < 0.0 {
            return Err(Error::InvalidInput(format!("val_loss must be nonnegative, got {val_loss}")));
        }

        self.tuples.push(PerformanceTuple {
            model: self.model.clone(),
            epoch,
            val_acc,
            val_loss,
            prediction: None,
        });
        if self.tuples.len() < cfg.c_min {
            return Ok(None);
        }
        let points = rescale_epochs(&self.tuples, self.epochs_per_iter)?;
        let result = fit(&points, bx, cfg)?;
        if result.status != FitStatus::Degenerate {
            if let Some(last) = self.tuples.last_mut() {
                last.prediction = Some(result.params.a);
            }
        }
        Ok(Some(result))
    }

    pub fn rescale_epochs(&self) -> Result<Vec<(f64, f64)>> {
        rescale_epochs(&self.tuples, self.epochs_per_iter)
    }
}

/// Maps epochs `E, 2E, 3E, ...` onto `x = 1, 2, 3, ...`, paired with accuracy.
pub fn rescale_epochs(tuples: &[PerformanceTuple], epochs_per_iter: f64) -> Result<Vec<(f64, f64)>> {
    let Some(first) = tuples.first() else {
        return Err(Error::InvalidInput("cannot rescale an empty history".into()));
    };
    if epochs_per_iter.is_nan() || epochs_per_iter <= 0.0 || (first.epoch / epochs_per_iter - 1.0).abs() > EPOCH_SLACK {
        return Err(Error::FirstEpochMismatch { first: first.epoch, epochs_per_iter });
    }
    Ok(tuples
        .iter()
        .map(|t| {
            let x = t.epoch / epochs_per_iter;
            let whole = x.round();
            let x = if (x - whole).abs() <= EPOCH_SLACK * whole.max(1.0) { whole } else { x };
            (x, t.val_acc)
        })
        .collect())
}
