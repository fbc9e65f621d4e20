use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, ranges or parameters that can never produce a valid result.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation produced NaN or infinity.
    #[error("non-finite value produced by {op}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        step: Option<usize>,
    },

    /// The API was used in a way it does not support (e.g. backward on a non-scalar).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported checkpoint format_version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Attach a step index to a numeric error.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::NonFinite { op, .. } => Error::NonFinite {
                op,
                step: Some(step),
            },
            other => other,
        }
    }

    /// Stable machine-readable code, used by the CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config_error",
            Error::NonFinite { .. } => "non_finite",
            Error::Usage(_) => "usage_error",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "not_found"
            }
            Error::Io { .. } => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}
