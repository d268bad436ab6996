//! Per-model sessions driving the record, predict, analyze loop, and the
//! newline-delimited JSON step protocol built on them.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, PoisonError};

use serde::{Deserialize, Serialize};

use crate::analyzer::{analyze, AnalyzerConfig, DatasetProfile, DecisionKind, EngineDecision};
use crate::curve_model::ParamBox;
use crate::error::{Error, Result};
use crate::fitter::FitConfig;
use crate::predictor::History;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub analyzer: AnalyzerConfig,
    pub fit: FitConfig,
    pub param_box: ParamBox,
    pub profile: DatasetProfile,
}

impl EngineConfig {
    /// Defaults for `profile`; the loss check is on for unbalanced datasets.
    pub fn for_profile(profile: DatasetProfile) -> Self {
        Self {
            analyzer: AnalyzerConfig::for_profile(&profile),
            fit: FitConfig::default(),
            param_box: ParamBox::default(),
            profile,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.analyzer.validate()?;
        self.fit.validate()?;
        self.param_box.validate()?;
        self.profile.validate()
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::for_profile(DatasetProfile::balanced("default", 10))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Active,
    Finished,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    history: History,
    config: EngineConfig,
    state: SessionState,
    outcome: Option<EngineDecision>,
}

impl Session {
    pub fn open(model: impl Into<String>, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let history = History::new(model, config.analyzer.epochs_per_iter)?;
        Ok(Self { history, config, state: SessionState::Active, outcome: None })
    }

    pub fn model(&self) -> &str {
        self.history.model()
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// The stopping decision, present once the session has finished.
    pub fn outcome(&self) -> Option<&EngineDecision> {
        self.outcome.as_ref()
    }

    pub fn step(&mut self, epoch: f64, val_acc: f64, val_loss: f64) -> Result<EngineDecision> {
        if self.state == SessionState::Finished {
            return Err(Error::SessionFinished(self.model().to_string()));
        }
        let e_max = self.config.analyzer.e_max;
        if epoch > e_max * (1.0 + 1e-9) {
            return Err(Error::BeyondHorizon { epoch, e_max });
        }
        self.history.record_and_predict(epoch, val_acc, val_loss, &self.config.param_box, &self.config.fit)?;
        let decision = analyze(&self.history, &self.config.analyzer, &self.config.profile);
        if decision.is_stop() {
            self.state = SessionState::Finished;
            self.outcome = Some(decision);
        }
        Ok(decision)
    }

    /// Ends an active session early, as when the trace runs out before the
    /// horizon; the best observed accuracy becomes the estimate.
    pub fn finish_exhausted(&mut self) -> Result<EngineDecision> {
        if let Some(d) = self.outcome {
            return Ok(d);
        }
        let last = self
            .history
            .last()
            .ok_or_else(|| Error::InvalidInput(format!("session {:?} has no measurements", self.model())))?;
        let best = self.history.max_val_acc().unwrap_or(last.val_acc);
        let decision = EngineDecision::exhausted(best, last.epoch);
        self.state = SessionState::Finished;
        self.outcome = Some(decision);
        Ok(decision)
    }
}

/// Steps `rows` of (epoch, val_acc, val_loss) through a fresh session until it
/// stops. A trace that ends before a stop is treated as exhausted.
pub fn replay_rows<I>(model: &str, rows: I, config: &EngineConfig) -> Result<EngineDecision>
where
    I: IntoIterator<Item = (f64, f64, f64)>,
{
    let mut session = Session::open(model, config.clone())?;
    for (epoch, val_acc, val_loss) in rows {
        let decision = session.step(epoch, val_acc, val_loss)?;
        if decision.is_stop() {
            return Ok(decision);
        }
    }
    session.finish_exhausted()
}

/// Thread-safe collection of sessions keyed by model id.
///
/// The map lock is held only to look up or insert; stepping locks a single
/// session, so distinct models never wait on each other.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    default_config: EngineConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

fn unpoison<T>(e: PoisonError<T>) -> T {
    e.into_inner()
}

impl SessionRegistry {
    pub fn new(default_config: EngineConfig) -> Result<Self> {
        default_config.validate()?;
        Ok(Self { default_config, sessions: Mutex::default() })
    }

    pub fn default_config(&self) -> &EngineConfig {
        &self.default_config
    }

    /// Opens a session. An active session with the same id is an error; a
    /// finished one is replaced.
    pub fn open(&self, model: &str, config: Option<EngineConfig>) -> Result<()> {
        let session = Session::open(model, config.unwrap_or_else(|| self.default_config.clone()))?;
        let mut map = self.sessions.lock().unwrap_or_else(unpoison);
        if let Some(existing) = map.get(model) {
            if existing.lock().unwrap_or_else(unpoison).state == SessionState::Active {
                return Err(Error::DuplicateModel(model.to_string()));
            }
        }
        map.insert(model.to_string(), Arc::new(Mutex::new(session)));
        Ok(())
    }

    fn handle(&self, model: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().unwrap_or_else(unpoison).get(model).cloned()
    }

    pub fn step(&self, model: &str, epoch: f64, val_acc: f64, val_loss: f64) -> Result<EngineDecision> {
        let session = self.handle(model).ok_or_else(|| Error::UnknownSession(model.to_string()))?;
        let mut session = session.lock().unwrap_or_else(unpoison);
        session.step(epoch, val_acc, val_loss)
    }

    /// Steps `model`, opening it with the default config if it is not known.
    pub fn step_or_open(&self, model: &str, epoch: f64, val_acc: f64, val_loss: f64) -> Result<EngineDecision> {
        let session = {
            let mut map = self.sessions.lock().unwrap_or_else(unpoison);
            match map.get(model) {
                Some(s) => s.clone(),
                None => {
                    let s = Arc::new(Mutex::new(Session::open(model, self.default_config.clone())?));
                    map.insert(model.to_string(), s.clone());
                    s
                }
            }
        };
        let mut session = session.lock().unwrap_or_else(unpoison);
        session.step(epoch, val_acc, val_loss)
    }

    pub fn snapshot(&self, model: &str) -> Result<Session> {
        let session = self.handle(model).ok_or_else(|| Error::UnknownSession(model.to_string()))?;
        let snapshot = session.lock().unwrap_or_else(unpoison).clone();
        Ok(snapshot)
    }

    pub fn close(&self, model: &str) -> Result<Session> {
        let session = self
            .sessions
            .lock()
            .unwrap_or_else(unpoison)
            .remove(model)
            .ok_or_else(|| Error::UnknownSession(model.to_string()))?;
        let snapshot = session.lock().unwrap_or_else(unpoison).clone();
        Ok(snapshot)
    }

    pub fn models(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().unwrap_or_else(unpoison).keys().cloned().collect();
        ids.sort();
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub model: String,
    pub epoch: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub model: String,
    pub action: Action,
    pub estimate: Option<f64>,
    pub converged: bool,
    pub stop_epoch: Option<f64>,
}

impl StepResponse {
    pub fn new(model: impl Into<String>, decision: &EngineDecision) -> Self {
        Self {
            model: model.into(),
            action: if decision.kind == DecisionKind::Continue { Action::Continue } else { Action::Stop },
            estimate: decision.estimate,
            converged: decision.converged,
            stop_epoch: decision.stop_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub model: Option<String>,
    pub error: String,
    pub message: String,
}

impl ErrorResponse {
    pub fn new(model: Option<String>, err: &Error) -> Self {
        Self { model, error: err.kind().to_string(), message: err.to_string() }
    }
}

/// Handles one protocol line and returns the JSON response line (without the
/// trailing newline). Unknown models are opened with the registry defaults.
/// `line_no` is only used in parse error messages.
pub fn handle_line(registry: &SessionRegistry, line_no: u64, line: &str) -> String {
    let response = match serde_json::from_str::<StepRequest>(line) {
        Err(e) => {
            let model = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("model").and_then(|m| m.as_str()).map(str::to_string));
            let err = Error::Parse { line: line_no, message: e.to_string() };
            serde_json::to_string(&ErrorResponse::new(model, &err))
        }
        Ok(req) => match registry.step_or_open(&req.model, req.epoch, req.val_acc, req.val_loss) {
            Ok(d) => serde_json::to_string(&StepResponse::new(req.model, &d)),
            Err(e) => serde_json::to_string(&ErrorResponse::new(Some(req.model), &e)),
        },
    };
    response.expect("protocol responses always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(a: f64, b: f64, c: f64, x: f64) -> f64 {
        a - b.powf(c - x)
    }

    #[test]
    fn open_and_duplicate() {
        let reg = SessionRegistry::new(EngineConfig::default()).unwrap();
        reg.open("nn-001", None).unwrap();
        assert_eq!(reg.snapshot("nn-001").unwrap().history().len(), 0);
        assert!(matches!(reg.open("nn-001", None), Err(Error::DuplicateModel(_))));
        let mut cfg = EngineConfig::default();
        cfg.analyzer.e_max = 10.0;
        reg.open("nn-002", Some(cfg)).unwrap();
        assert_eq!(reg.snapshot("nn-002").unwrap().config().analyzer.e_max, 10.0);
    }

    #[test]
    fn first_step_continues() {
        let mut s = Session::open("m", EngineConfig::default()).unwrap();
        assert_eq!(s.step(0.5, 20.0, 2.0).unwrap(), EngineDecision::CONTINUE);
        assert_eq!(s.state(), SessionState::Active);
        assert!(s.outcome().is_none());
    }

    #[test]
    fn noiseless_trace_converges_early() {
        let mut s = Session::open("m", EngineConfig::default()).unwrap();
        let mut last = EngineDecision::CONTINUE;
        for i in 1..=40 {
            last = s.step(0.5 * i as f64, curve(36.0, 1.8, 1.5, i as f64), 1.0).unwrap();
            if last.is_stop() {
                break;
            }
        }
        assert_eq!(last.kind, DecisionKind::Converged);
        assert!((last.estimate.unwrap() - 36.0).abs() < 1e-3);
        assert!(last.stop_epoch.unwrap() < 20.0);
        assert_eq!(s.outcome(), Some(&last));
        assert!(matches!(s.step(last.stop_epoch.unwrap() + 0.5, 30.0, 1.0), Err(Error::SessionFinished(_))));
    }

    #[test]
    fn epoch_errors() {
        let mut s = Session::open("m", EngineConfig::default()).unwrap();
        assert!(matches!(s.step(1.0, 20.0, 2.0), Err(Error::OutOfOrderEpoch { .. })));
        let mut cfg = EngineConfig::default();
        cfg.analyzer.e_max = 1.0;
        let mut s = Session::open("m", cfg).unwrap();
        s.step(0.5, 20.0, 2.0).unwrap();
        s.step(1.0, 20.0, 2.0).unwrap();
        assert!(matches!(s.step(1.5, 20.0, 2.0), Err(Error::SessionFinished(_))));
        let mut s = Session::open("m", cfg_e_max(1.0)).unwrap();
        assert!(matches!(s.step(1.5, 20.0, 2.0), Err(Error::BeyondHorizon { .. })));
    }

    fn cfg_e_max(e_max: f64) -> EngineConfig {
        let mut cfg = EngineConfig::default();
        cfg.analyzer.e_max = e_max;
        cfg
    }

    #[test]
    fn replay_short_trace_is_exhausted() {
        let rows = (1..=4).map(|i| (0.5 * i as f64, 10.0 * i as f64, 1.0));
        let d = replay_rows("m", rows, &EngineConfig::default()).unwrap();
        assert_eq!(d.kind, DecisionKind::Exhausted);
        assert_eq!(d.estimate, Some(40.0));
        assert_eq!(d.stop_epoch, Some(2.0));
    }

    #[test]
    fn reopen_after_finish() {
        let reg = SessionRegistry::new(cfg_e_max(0.5)).unwrap();
        reg.open("m", None).unwrap();
        assert!(reg.step("m", 0.5, 10.0, 1.0).unwrap().is_stop());
        reg.open("m", None).unwrap();
        assert_eq!(reg.snapshot("m").unwrap().state(), SessionState::Active);
        assert!(matches!(reg.step("x", 0.5, 1.0, 1.0), Err(Error::UnknownSession(_))));
        reg.close("m").unwrap();
        assert!(reg.models().is_empty());
    }

    #[test]
    fn protocol_lines() {
        let reg = SessionRegistry::new(EngineConfig::default()).unwrap();
        let out = handle_line(&reg, 1, r#"{"model":"a","epoch":0.5,"val_acc":12.5,"val_loss":2.0}"#);
        assert_eq!(out, r#"{"model":"a","action":"continue","estimate":null,"converged":false,"stop_epoch":null}"#);
        let out = handle_line(&reg, 2, r#"{"model":"a","epoch":2.0,"val_acc":12.5,"val_loss":2.0}"#);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["error"], "out_of_order_epoch");
        assert_eq!(v["model"], "a");
        let v: serde_json::Value = serde_json::from_str(&handle_line(&reg, 3, "not json")).unwrap();
        assert_eq!(v["error"], "parse_error");
        assert!(v["model"].is_null());
        assert!(v["message"].as_str().unwrap().contains("line 3"));
    }

    #[test]
    fn concurrent_sessions() {
        let reg = Arc::new(SessionRegistry::new(EngineConfig::default()).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|k| {
                let reg = reg.clone();
                std::thread::spawn(move || {
                    let model = format!("m{k}");
                    let a = 40.0 + 5.0 * k as f64;
                    for i in 1..=40 {
                        let d = reg.step_or_open(&model, 0.5 * i as f64, curve(a, 2.0, 2.0, i as f64), 1.0).unwrap();
                        if d.is_stop() {
                            return (a, d);
                        }
                    }
                    unreachable!("e_max always stops")
                })
            })
            .collect();
        for h in handles {
            let (a, d) = h.join().unwrap();
            assert!(d.converged);
            assert!((d.estimate.unwrap() - a).abs() < 1e-3);
        }
        assert_eq!(reg.models().len(), 8);
    }
}
