use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0} (must be >= 1)")]
    InvalidDimension(usize),

    #[error("unsupported moment power: {0} (only 2 and 4 are available)")]
    UnsupportedPower(u32),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "undersized inner sample: m = {m} gives DKW radius {dkw_radius:.4} > 0.5, \
         the distance estimate would be meaningless"
    )]
    UndersizedSample { m: usize, dkw_radius: f64 },

    #[error("stream derivation path too deep: {0} (max 8)")]
    StreamPathTooDeep(usize),

    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),

    #[error("result record has no table named {0:?}")]
    MissingTable(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
