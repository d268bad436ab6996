use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation overflow: b^(c - x) is not representable at x = {x}")]
    EvaluationOverflow { x: f64 },

    #[error("too few points: need at least {required}, got {got}")]
    TooFewPoints { required: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("out-of-order epoch: expected {expected}, got {got}")]
    OutOfOrderEpoch { expected: f64, got: f64 },

    #[error("first epoch {first} does not match epochs-per-iteration {epochs_per_iter}")]
    FirstEpochMismatch { first: f64, epochs_per_iter: f64 },

    #[error("epoch {epoch} is beyond the training horizon {e_max}")]
    BeyondHorizon { epoch: f64, e_max: f64 },

    #[error("a session for model {0:?} is already active")]
    DuplicateModel(String),

    #[error("session for model {0:?} has finished")]
    SessionFinished(String),

    #[error("no session for model {0:?}")]
    UnknownSession(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invariant violation in model {model:?}: {message}")]
    InvariantViolation { model: String, message: String },

    #[error("trace {0:?} has no train_loss on every row")]
    MissingTrainLoss(String),

    #[error("no outcomes to rank")]
    EmptyOutcomes,

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable snake_case identifier, used in protocol error responses.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EvaluationOverflow { .. } => "evaluation_overflow",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::NonFiniteInput(_) => "non_finite_input",
            Error::InvalidInput(_) => "invalid_input",
            Error::OutOfOrderEpoch { .. } => "out_of_order_epoch",
            Error::FirstEpochMismatch { .. } => "first_epoch_mismatch",
            Error::BeyondHorizon { .. } => "beyond_horizon",
            Error::DuplicateModel(_) => "duplicate_model",
            Error::SessionFinished(_) => "session_finished",
            Error::UnknownSession(_) => "unknown_session",
            Error::Parse { .. } => "parse_error",
            Error::InvariantViolation { .. } => "invariant_violation",
            Error::MissingTrainLoss(_) => "missing_train_loss",
            Error::EmptyOutcomes => "empty_outcomes",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io { .. } => "io_error",
        }
    }

    /// True for errors caused by bad input or configuration rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::EvaluationOverflow { .. })
    }
}
