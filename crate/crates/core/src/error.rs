use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Kernel matrix could not be factorized even at the largest permitted jitter.
    #[error("kernel matrix is singular (jitter reached {jitter:e})")]
    SingularKernel { jitter: f64 },

    /// `H Hᵀ + R + diag(k̄)` was not positive definite for some member.
    #[error("innovation covariance is singular at iteration {iteration}, member {member}")]
    SingularInnovation { iteration: usize, member: usize },

    #[error("ensemble member {member} became non-finite at iteration {iteration}")]
    NonFiniteMember { iteration: usize, member: usize },

    #[error("unstable time step: v = {value} at t = {time} ms (node {node})")]
    UnstableStep { time: f64, node: usize, value: f64 },

    #[error("degenerate training labels: {0}")]
    Degenerate(String),

    #[error("only {survivors} parameter sets survived screening, need at least {required}")]
    InsufficientSurvivors { survivors: usize, required: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-friendly name of the variant, used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::SingularKernel { .. } => "SingularKernel",
            Error::SingularInnovation { .. } => "SingularInnovation",
            Error::NonFiniteMember { .. } => "NonFiniteMember",
            Error::UnstableStep { .. } => "UnstableStep",
            Error::Degenerate(_) => "Degenerate",
            Error::InsufficientSurvivors { .. } => "InsufficientSurvivors",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
