use std::path::Path;

use pmfrec_core::Error as CoreError;

/// Failure of a command, classified by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad or inconsistent flags.
    #[error("usage: {0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent input files.
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
    /// The reader of standard output went away (e.g. `| head`); not a failure.
    #[error("output closed")]
    OutputClosed,
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numerical(_) => 3,
            AppError::OutputClosed => 0,
        }
    }

    pub(crate) fn output(err: std::io::Error) -> Self {
        if err.kind() == std::io::ErrorKind::BrokenPipe {
            AppError::OutputClosed
        } else {
            AppError::Data(format!("writing output: {err}"))
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        AppError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for AppError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Config(_) => AppError::Usage(err.to_string()),
            CoreError::Numerical(_) => AppError::Numerical(err.to_string()),
            _ => AppError::Data(err.to_string()),
        }
    }
}

impl From<serde_json::Error> for AppError {
    fn from(err: serde_json::Error) -> Self {
        AppError::Data(err.to_string())
    }
}

impl From<csv::Error> for AppError {
    fn from(err: csv::Error) -> Self {
        if let csv::ErrorKind::Io(e) = err.kind() {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return AppError::OutputClosed;
            }
        }
        AppError::Data(err.to_string())
    }
}

pub type AppResult<T> = Result<T, AppError>;
