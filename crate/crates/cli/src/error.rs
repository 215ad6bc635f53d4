use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pcs_core::Error),

    #[error(transparent)]
    Service(#[from] pcs_service::ServiceError),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Service(e) => e.kind(),
            CliError::Config { .. } => "invalid_config",
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `{"error": ..., "kind": ...}` for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.to_string(), "kind": self.kind() }).to_string()
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
