use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("capacity exceeded: {requested} entries requested, cap is {cap}")]
    Capacity { requested: usize, cap: usize },

    #[error("integration blew up at step {step}: {reason}")]
    IntegrationBlowup { step: u64, reason: String },

    #[error("drift singularity at {0}")]
    DriftSingularity(String),

    #[error("degenerate importance weight at sample {0}: sampling density vanishes")]
    DegenerateWeight(usize),

    #[error("all singular values truncated at core {core}")]
    EmptySubspace { core: usize },

    #[error("no singular value above the truncation threshold")]
    EmptyModel,

    #[error("ill-conditioned whitening: smallest singular value {min:e} vs largest {max:e}")]
    IllConditioned { min: f64, max: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
