use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Core(#[from] rwgd_core::Error),
    /// A run finished but one of its checks failed.
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    /// 0 success, 1 assumption guard or failed check, 2 config or IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_guard_failure() => 1,
            CliError::Check(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
