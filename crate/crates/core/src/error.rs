use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
  /// An argument lies outside the domain of the operation.
  #[error("domain error: {0}")]
  Domain(String),
  /// A specification violates one of its construction invariants.
  #[error("invalid spec: {0}")]
  InvalidSpec(String),
  /// The requested regime or catalog entry is not supported.
  #[error("unsupported: {0}")]
  Unsupported(String),
  /// A required input quantity is missing or infinite.
  #[error("invalid input: {0}")]
  InvalidInput(String),
  /// An iterative method failed to converge.
  #[error("numeric failure: {message}")]
  Numeric { message: String, diagnostics: Vec<(String, f64)> },
  /// The SDE state left the representable range.
  #[error("integration overflow at time {time}")]
  Overflow { time: f64 },
  #[error("io error: {0}")]
  Io(#[from] std::io::Error),
  #[error("csv error: {0}")]
  Csv(#[from] csv::Error),
  #[error("json error: {0}")]
  Json(#[from] serde_json::Error),
}

impl Error {
  pub(crate) fn numeric(message: impl Into<String>, diagnostics: Vec<(&str, f64)>) -> Self {
    Error::Numeric {
      message: message.into(),
      diagnostics: diagnostics.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }
  }
}

pub type Result<T> = std::result::Result<T, Error>;
