//! Convergence analysis over a model's prediction history.
//!
//! A run converges once the latest fitted asymptote is a plausible accuracy
//! (at most 100%), the last `window` predictions sit within `threshold` of
//! their mean, and, when the loss check is enabled and the prediction is no
//! better than guessing, the minimum validation loss has gone stale for
//! `loss_epochs` epochs. At `e_max` the best observed accuracy is reported
//! instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::History;

const EPOCH_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerConfig {
    /// Number of most recent predictions that must agree (N).
    pub window: usize,
    /// Epochs trained per iteration (E).
    pub epochs_per_iter: f64,
    /// Training horizon in epochs.
    pub e_max: f64,
    /// Allowed deviation of each windowed prediction from the window mean, in
    /// percentage points (t).
    pub threshold: f64,
    pub loss_check: bool,
    /// Epochs the minimum validation loss must stay stale (L).
    pub loss_epochs: f64,
    /// Added to the guessing rate when classifying never-learn predictions.
    pub never_learn_margin: f64,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            window: 3,
            epochs_per_iter: 0.5,
            e_max: 20.0,
            threshold: 0.5,
            loss_check: false,
            loss_epochs: 5.0,
            never_learn_margin: 0.5,
        }
    }
}

fn is_multiple(value: f64, step: f64) -> bool {
    let k = value / step;
    k >= 1.0 - EPOCH_SLACK && (k - k.round()).abs() <= EPOCH_SLACK * k.max(1.0)
}

impl AnalyzerConfig {
    /// Defaults with the loss check enabled exactly for unbalanced datasets.
    pub fn for_profile(profile: &DatasetProfile) -> Self {
        Self { loss_check: !profile.balanced, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.window == 0 {
            return bad("window (N) must be at least 1".into());
        }
        if !(self.epochs_per_iter > 0.0 && self.epochs_per_iter.is_finite()) {
            return bad(format!("epochs_per_iter (E) must be positive, got {}", self.epochs_per_iter));
        }
        if !is_multiple(self.e_max, self.epochs_per_iter) {
            return bad(format!("e_max {} is not a positive multiple of E = {}", self.e_max, self.epochs_per_iter));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad(format!("threshold (t) must be positive, got {}", self.threshold));
        }
        if !is_multiple(self.loss_epochs, self.epochs_per_iter) {
            return bad(format!(
                "loss_epochs (L) {} is not a positive multiple of E = {}",
                self.loss_epochs, self.epochs_per_iter
            ));
        }
        if !(self.never_learn_margin >= 0.0 && self.never_learn_margin.is_finite()) {
            return bad(format!("never_learn_margin must be nonnegative, got {}", self.never_learn_margin));
        }
        Ok(())
    }

    /// Number of trailing tuples the loss minimum must predate.
    pub fn loss_window(&self) -> usize {
        (self.loss_epochs / self.epochs_per_iter - EPOCH_SLACK).ceil().max(1.0) as usize
    }
}

/// Class balance of the dataset a model is trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub num_classes: usize,
    /// Fraction of samples in each class; sums to 1.
    pub class_fractions: Vec<f64>,
    pub balanced: bool,
}

impl DatasetProfile {
    pub fn balanced(name: impl Into<String>, num_classes: usize) -> Self {
        Self {
            name: name.into(),
            num_classes,
            class_fractions: vec![1.0 / num_classes as f64; num_classes],
            balanced: true,
        }
    }

    pub fn with_fractions(name: impl Into<String>, class_fractions: Vec<f64>) -> Result<Self> {
        let first = class_fractions.first().copied().unwrap_or(0.0);
        let balanced = class_fractions.iter().all(|&f| (f - first).abs() <= 1e-9);
        let profile = Self { name: name.into(), num_classes: class_fractions.len(), class_fractions, balanced };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if self.class_fractions.len() != self.num_classes {
            return Err(Error::InvalidConfig(format!(
                "expected {} class fractions, got {}",
                self.num_classes,
                self.class_fractions.len()
            )));
        }
        if self.class_fractions.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidConfig("class fractions must be positive".into()));
        }
        let sum: f64 = self.class_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!("class fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Accuracy of always guessing the largest class, in percent.
    pub fn guessing_rate(&self) -> f64 {
        let largest = self.class_fractions.iter().copied().fold(0.0, f64::max);
        100.0 * largest.max(1.0 / self.num_classes as f64)
    }
}

/// Predictions at or below this accuracy count as never-learn predictions.
pub fn never_learn_threshold(profile: &DatasetProfile, margin: f64) -> f64 {
    profile.guessing_rate() + margin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Continue,
    Converged,
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineDecision {
    pub kind: DecisionKind,
    pub estimate: Option<f64>,
    pub converged: bool,
    pub stop_epoch: Option<f64>,
}

impl EngineDecision {
    pub const CONTINUE: Self = Self { kind: DecisionKind::Continue, estimate: None, converged: false, stop_epoch: None };

    pub fn converged(estimate: f64, epoch: f64) -> Self {
        Self { kind: DecisionKind::Converged, estimate: Some(estimate), converged: true, stop_epoch: Some(epoch) }
    }

    pub fn exhausted(best_observed: f64, epoch: f64) -> Self {
        Self { kind: DecisionKind::Exhausted, estimate: Some(best_observed), converged: false, stop_epoch: Some(epoch) }
    }

    pub fn is_stop(&self) -> bool {
        self.kind != DecisionKind::Continue
    }
}

/// Decides whether the run recorded in `history` can stop.
pub fn analyze(history: &History, cfg: &AnalyzerConfig, profile: &DatasetProfile) -> EngineDecision {
    let Some(last) = history.last() else {
        return EngineDecision::CONTINUE;
    };
    let epoch = last.epoch;
    let slack = EPOCH_SLACK * epoch.max(1.0);

    if epoch >= cfg.e_max - slack {
        let best = history.max_val_acc().unwrap_or(last.val_acc);
        return EngineDecision::exhausted(best, epoch);
    }
    if epoch <= cfg.window as f64 * cfg.epochs_per_iter + slack {
        return EngineDecision::CONTINUE;
    }

    // Condition 1: a plausible accuracy
    let Some(estimate) = last.prediction.filter(|p| p.is_finite()) else {
        return EngineDecision::CONTINUE;
    };
    if estimate > 100.0 {
        return EngineDecision::CONTINUE;
    }

    // Condition 2: the last N predictions agree to within t of their mean
    let tuples = history.tuples();
    if tuples.len() < cfg.window {
        return EngineDecision::CONTINUE;
    }
    let recent: Option<Vec<f64>> = tuples[tuples.len() - cfg.window..]
        .iter()
        .map(|t| t.prediction.filter(|p| p.is_finite()))
        .collect();
    let Some(recent) = recent else {
        return EngineDecision::CONTINUE;
    };
    let mean = recent.iter().sum::<f64>() / recent.len() as f64;
    let tolerance = cfg.threshold + 1e-12 * mean.abs().max(1.0);
    if recent.iter().any(|p| (p - mean).abs() > tolerance) {
        return EngineDecision::CONTINUE;
    }

    // Condition 3: a never-learn prediction also needs a stale loss minimum
    if cfg.loss_check && estimate <= never_learn_threshold(profile, cfg.never_learn_margin) && !loss_is_stale(history, cfg) {
        return EngineDecision::CONTINUE;
    }

    EngineDecision::converged(estimate, epoch)
}

/// True when the running minimum of the validation loss was set at least
/// `loss_window` tuples before the latest one.
fn loss_is_stale(history: &History, cfg: &AnalyzerConfig) -> bool {
    let tuples = history.tuples();
    let mut min_idx = 0;
    for (i, t) in tuples.iter().enumerate() {
        if t.val_loss < tuples[min_idx].val_loss {
            min_idx = i;
        }
    }
    tuples.len() - 1 - min_idx >= cfg.loss_window()
}
