use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A formula looks further ahead than the trace provides.
    #[error("formula needs step {needed} but trace has {len} steps")]
    Horizon { needed: usize, len: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("predicate `{label}` margin {value} is outside [-1, 1] after scaling")]
    Normalization { label: String, value: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Training { epoch: usize, loss: f64 },

    /// No trajectory clears the current threshold.
    #[error("optimisation stalled: {0}")]
    Stall(String),

    #[error("horizon {horizon} exceeds the enumeration cap of {cap} steps")]
    HorizonTooLarge { horizon: usize, cap: usize },

    #[error("perfect proposal undefined: failure probability is zero")]
    UndefinedProposal,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
