use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value for `{0}`")]
    NonFinite(&'static str),

    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),

    #[error("pair index {index} out of range for a chain of {len} vehicles")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("negative gap {0} m (vehicles already overlap)")]
    NegativeGap(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("could not place vehicles with positive gaps after {0} attempts")]
    Placement(usize),

    #[error("episode is finished; call reset before stepping again")]
    EpisodeDone,

    #[error("episode has not been reset")]
    NotReset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("backward pass requested without a cached forward pass")]
    NoForwardCache,

    #[error("network architectures differ")]
    ArchitectureMismatch,

    #[error("empty batch")]
    EmptyBatch,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error")]
    Io(#[from] std::io::Error),

    #[error("json error")]
    Json(#[from] serde_json::Error),

    #[error("csv error")]
    Csv(#[from] csv::Error),
}
