use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix has zero Frobenius norm")]
    ZeroMatrix,
    #[error("input contains NaN or infinite values")]
    NonFinite,
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input side {n} is smaller than kernel side {k}")]
    InputTooSmall { n: usize, k: usize },
    #[error("kernel side {0} is even; centred zero padding needs an odd kernel")]
    EvenKernel(usize),
    #[error("theorem hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("problem too large for the dense oracle: {0}")]
    TooLarge(String),
    #[error("anisotropy weights must be strictly positive")]
    NonPositiveQ,
    #[error("root bracket not found: {0}")]
    RootBracketFailure(String),
    #[error("probability {0} is too close to 0 or 1")]
    DegenerateP(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("selection counts are empty or sum to zero")]
    EmptyCounts,
    #[error("empty temperature or simplex-map grid")]
    EmptyGrid,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
