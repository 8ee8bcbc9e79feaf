use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain box: {0}")]
    InvalidDomain(String),

    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown cost family `{0}`")]
    UnknownFamily(String),

    #[error("inner minimization failed: {0}")]
    InnerMinimization(String),

    #[error("singular mixed block D2_(x{i},x{j})c (|det| = {det:e})")]
    SingularBlock { i: usize, j: usize, det: f64 },

    #[error("newton solve failed: {0}")]
    Newton(String),

    #[error("materialization cap exceeded: {entries} entries > cap {cap}")]
    CapExceeded { entries: usize, cap: usize },

    #[error("work cap exceeded: {0}")]
    WorkCap(String),

    #[error("infeasible potentials: max violation {0:e}")]
    InfeasiblePotentials(f64),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("{0}")]
    Precondition(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
