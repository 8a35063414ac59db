use std::path::PathBuf;

/// Harness failures, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {detail}")]
    Io { path: PathBuf, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Core(#[from] protoshape_core::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.into(),
            detail: err.to_string(),
        }
    }

    /// 2 config, 3 I/O, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use protoshape_core::Error as E;
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Numeric(_) => 4,
            HarnessError::Core(e) => match e {
                E::Io { .. } | E::Format { .. } => 3,
                E::NonFinite(_) => 4,
                _ => 2,
            },
        }
    }
}
