use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad command line or configuration; maps to exit code 1.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] debinn::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Serde(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Serde(e.to_string())
    }
}

impl HarnessError {
    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
