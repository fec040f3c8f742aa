use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] rwre_core::Error),
    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },
    #[error("model `{model}` fails its hypotheses: {detail}")]
    Hypotheses { model: String, detail: String },
    #[error("acceptance check failed: {0}")]
    Check(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type LabResult<T> = std::result::Result<T, LabError>;

pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io { path: path.display().to_string(), source }
}
