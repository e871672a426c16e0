use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    Space(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("trial {0} was already told")]
    DuplicateTrial(u64),

    #[error("hypervolume: {0}")]
    Hypervolume(String),

    #[error("forest: {0}")]
    Forest(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("unknown activation `{0}`")]
    UnknownActivation(String),

    #[error("CFL condition violated: {0}")]
    Cfl(String),

    #[error("data: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("loss weight alpha={0} outside [0, 1]")]
    Alpha(f64),

    #[error("results log: {0}")]
    Log(String),

    #[error("resume refused: {0}")]
    Resume(String),

    #[error("worker: {0}")]
    Worker(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
