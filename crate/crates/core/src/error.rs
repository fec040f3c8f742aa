use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid step distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid environment model: {0}")]
    InvalidModel(String),

    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),

    #[error("model file, {location}: {message}")]
    ModelFile { location: String, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("time {t} is beyond the path horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rejection sampling gave up after {0} rounds")]
    RejectionLimit(usize),

    #[error("construction unresolved at path length {len}")]
    Unresolved { len: usize },

    #[error("non-positive value {value} at index {index} in log-log fit")]
    NonPositive { index: usize, value: f64 },

    #[error("ceiling refinement did not converge: last change {last_change:e} at ceiling {ceiling}")]
    NoConvergence { ceiling: i64, last_change: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
