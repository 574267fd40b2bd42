use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Hilbert-space dimension {dim} exceeds the cap of {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("eigensolver failed (LAPACK info = {info})")]
    Eigensolver { info: i32 },

    #[error("eigenpair residual {max_residual:e} exceeds tolerance")]
    Residual { max_residual: f64 },

    #[error("state is not normalized (norm {norm})")]
    Unnormalized { norm: f64 },

    #[error("fit did not converge: {reason} (residual {residual:e})")]
    FitNotConverged { reason: String, residual: f64 },

    #[error("decay rate is not identifiable: {0}")]
    Unidentifiable(String),

    #[error("all outcome probabilities vanished at step {step} (total {total:e})")]
    ProbabilityLoss { step: usize, total: f64 },

    #[error("probabilities do not sum to one at step {step} (total {total})")]
    ProbabilityLeak { step: usize, total: f64 },

    #[error("density of states is zero or undefined at E = {energy}")]
    DensityUnavailable { energy: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed data file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
