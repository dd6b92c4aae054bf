use alloc::string::String;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("user at distance {distance} from a RIS (minimum {min_separation})")]
    DegenerateGeometry { distance: f64, min_separation: f64 },

    #[error("sampling unsupported: {0}")]
    SamplingUnsupported(&'static str),

    #[error("prior is not gaussian")]
    NotGaussian,

    #[error("nuisance information matrix is singular")]
    SingularNuisance,

    #[error("trajectory ensemble is empty")]
    EmptyEnsemble,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("equivalent FIM is not positive definite (min eigenvalue {min_eigenvalue})")]
    SingularEfim { min_eigenvalue: f64 },

    #[error("propagation series diverges (spectral radius {spectral_radius})")]
    SeriesDiverged { spectral_radius: f64 },

    #[error("direct-information block {index} is singular")]
    SingularBlock { index: usize },

    #[error("inner matrix at step {step} is singular")]
    SingularInner { step: usize },

    #[error("{0} is not symmetric positive definite")]
    NotSpd(&'static str),

    #[error("state matrix is singular")]
    SingularState,

    #[error("fixed-point iteration did not converge in {steps} steps")]
    MaxStepsExceeded { steps: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
