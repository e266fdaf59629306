use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A stationary or finite-system rate came out nonpositive.
    #[error("nonpositive rate {rate} at index {index}")]
    NonpositiveRate { index: usize, rate: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("coupling geometry error: {0}")]
    Geometry(String),

    #[error("degenerate mirror direction: |v| = 0")]
    DegenerateDirection,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
