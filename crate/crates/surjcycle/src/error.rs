use thiserror::Error;

#[derive(Error, Debug)]
pub enum SurjError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at iteration {iter}: {message}")]
    Diverged { iter: usize, message: String },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SurjError>;
