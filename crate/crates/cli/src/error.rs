use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("refusing to overwrite {0} (pass --force)")]
    RefusedOverwrite(PathBuf),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Solver(#[from] nnparafac2::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// 0 success, 1 runtime or solver failure, 2 invalid input or configuration.
    pub fn exit_code(&self) -> i32 {
        use nnparafac2::Error as E;
        match self {
            CliError::Parse { .. } | CliError::RefusedOverwrite(_) | CliError::InvalidInput(_) => 2,
            CliError::Solver(
                E::Empty
                | E::ShapeMismatch(_)
                | E::NonFinite { .. }
                | E::ColumnMismatch { .. }
                | E::ZeroTensor
                | E::RankExceedsWidth { .. }
                | E::InvalidConfig(_),
            ) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
