//! JSON bodies of the HTTP service, shared by the server and its client.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analyzer::EngineDecision;
use crate::config::{engine_config_from_kv, render_engine_config};
use crate::curve_model::CurveParams;
use crate::engine::{EngineConfig, Session, SessionState};
use crate::error::Result;
use crate::fitter::FitResult;
use crate::kv::KvDoc;
use crate::predictor::PerformanceTuple;

/// Config overrides as `key -> value`, using the `key=value` config names.
pub type Overrides = BTreeMap<String, serde_json::Value>;

fn value_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(items) => items.iter().map(value_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// `base` with `overrides` applied on top.
pub fn apply_overrides(base: &EngineConfig, overrides: &Overrides) -> Result<EngineConfig> {
    if overrides.is_empty() {
        return Ok(base.clone());
    }
    let mut doc = KvDoc::parse(&render_engine_config(base))?;
    for (k, v) in overrides {
        doc.push(k.clone(), value_text(v));
    }
    engine_config_from_kv(&doc, None, &[])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSessionRequest {
    pub model: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub model: String,
    pub state: SessionState,
    pub outcome: Option<EngineDecision>,
    pub config: EngineConfig,
    pub history: Vec<PerformanceTuple>,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        Self {
            model: s.model().to_string(),
            state: s.state(),
            outcome: s.outcome().copied(),
            config: s.config().clone(),
            history: s.history().tuples().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    /// `(x, accuracy)` pairs at `x = 1, 2, ...`.
    pub points: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResponse {
    pub params: CurveParams,
    pub converged: bool,
    pub status: String,
    pub iterations: usize,
    pub final_cost: f64,
}

impl From<&FitResult> for FitResponse {
    fn from(r: &FitResult) -> Self {
        Self {
            params: r.params,
            converged: r.converged,
            status: r.status.as_str().to_string(),
            iterations: r.iterations,
            final_cost: r.final_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
}
