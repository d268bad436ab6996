//! Early final-accuracy estimation for neural network training runs.
//!
//! Per-iteration validation metrics are fitted with the saturating curve
//! `a - b^(c - x)`; once the fitted asymptote stabilizes the run can be
//! stopped and the asymptote reported as the model's expected accuracy.

pub mod analyzer;
pub mod api;
pub mod baseline;
pub mod config;
pub mod curve_model;
pub mod engine;
pub mod error;
pub mod fitter;
pub mod kv;
pub mod metrics;
pub mod predictor;
pub mod replay;
pub mod synth;
pub mod trace_io;

pub use analyzer::{analyze, never_learn_threshold, AnalyzerConfig, DatasetProfile, DecisionKind, EngineDecision};
pub use baseline::baseline_stop_epoch;
pub use curve_model::{default_box, CurveParams, ParamBox};
pub use engine::{
    handle_line, replay_rows, Action, EngineConfig, ErrorResponse, Session, SessionRegistry, SessionState, StepRequest,
    StepResponse,
};
pub use error::{Error, Result};
pub use fitter::{fit, FitConfig, FitResult, FitStatus};
pub use metrics::{EngineOutcome, MetricsReport, ModelOutcome};
pub use predictor::{rescale_epochs, History, PerformanceTuple};
pub use replay::{baseline_corpus, replay_corpus};
pub use synth::{generate_corpus, generate_trace, CurveKind, CurveSpec, GeneratedCorpus, LossModel, Population};
pub use trace_io::{load_corpus, save_corpus, Trace, TraceCorpus, TraceRow};
