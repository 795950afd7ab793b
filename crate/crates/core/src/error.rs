use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported Daubechies order {order}; valid orders are {min}..={max}")]
    UnsupportedOrder { order: usize, min: usize, max: usize },

    #[error("table depth {depth} is too shallow; at least {min} is required")]
    InvalidDepth { depth: u32, min: u32 },

    #[error("refinement eigenproblem is degenerate for order {order}")]
    DegenerateRefinement { order: usize },

    #[error("level {level} is below the base level j0 = {j0}")]
    LevelBelowBase { level: i32, j0: i32 },

    #[error("level {level} exceeds the materialized maximum {max}")]
    LevelAboveMax { level: i32, max: i32 },

    #[error("invalid enlargement: {0}")]
    InvalidEnlargement(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample")]
    EmptySample,

    #[error(
        "rejection sampler stalled: {accepted} accepted out of {proposals} proposals \
         (acceptance rate below {min_rate})"
    )]
    SamplerStalled { proposals: u64, accepted: u64, min_rate: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },
}
