use thiserror::Error;

#[derive(Debug, Error)]
pub enum MqgmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constant variable '{0}': at least two distinct values are required")]
    ConstantVariable(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("system matrix is not positive definite (pivot {pivot} = {value:e})")]
    SingularSystem { pivot: usize, value: f64 },

    #[error("subproblem for variable {k}: {source}")]
    Subproblem {
        k: usize,
        #[source]
        source: Box<MqgmError>,
    },

    #[error("generator failed: {0}")]
    Generator(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MqgmError>;
