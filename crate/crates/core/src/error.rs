use thiserror::Error;

/// Unified error type for the toolkit. The `Display` form is a single line
/// with a stable `kind:` prefix so the CLI can emit machine-readable errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("shape: {0}")]
    Shape(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("io: {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse: {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, err: std::io::Error) -> Self {
        Error::Io { path: path.into(), message: err.to_string() }
    }

    /// Exit code for the CLI: 2 for config/usage problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 2,
            _ => 1,
        }
    }
}
