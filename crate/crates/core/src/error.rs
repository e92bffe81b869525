use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("policy returned non-finite action {action} at step {step}")]
    NonFiniteAction { step: usize, action: f64 },

    #[error("could not reach reward threshold {threshold:.3} after {attempts} episodes (best {best:.3})")]
    ExpertThreshold {
        threshold: f64,
        attempts: usize,
        best: f64,
    },

    #[error("only {survivors} points within distance bound, {requested} requested")]
    TooFewSurvivors { survivors: usize, requested: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("model diverges from s0")]
    PlannerDiverged,

    #[error("objective non-finite for the whole population in consecutive generations")]
    ObjectiveDiverged,

    #[error("attack infeasible under tolerance")]
    AttackInfeasible,

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
