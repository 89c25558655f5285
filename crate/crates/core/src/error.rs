use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped by the exit-code family the CLI maps them to:
/// configuration problems, data problems, and numeric divergence.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("unknown token {token:?} (expected {kind}){}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    UnknownToken { kind: &'static str, token: String, line: Option<usize> },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("diverged: {0}")]
    Diverged(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Attach a line number to a token error.
    pub fn at_line(self, at: usize) -> Self {
        match self {
            Error::UnknownToken { kind, token, .. } => Error::UnknownToken { kind, token, line: Some(at) },
            Error::Schema(message) | Error::Shape(message) => Error::Malformed { line: at, message },
            other => other,
        }
    }

    /// Short machine-parsable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::MissingFile(_) => "missing_file",
            Error::Io { .. } => "io",
            Error::Malformed { .. } => "malformed",
            Error::UnknownToken { .. } => "unknown_token",
            Error::Schema(_) => "schema",
            Error::ManifestMismatch(_) => "manifest_mismatch",
            Error::InsufficientHistory(_) => "insufficient_history",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Diverged(_) => "diverged",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Diverged(_) => 4,
            _ => 3,
        }
    }
}
