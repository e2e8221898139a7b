use thiserror::Error;

/// Exit code for a successful run with all checks passing.
pub const EXIT_OK: i32 = 0;
/// Exit code for usage and validation errors.
pub const EXIT_USAGE: i32 = 1;
/// Exit code when a run completes but a check fails.
pub const EXIT_CHECK: i32 = 2;
/// Exit code when a size cap or iteration budget is exhausted.
pub const EXIT_CAP: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] gwer_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use gwer_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Json(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                E::ArenaOverflow { .. }
                | E::NoConvergence { .. }
                | E::PathTooShort
                | E::InsufficientDepth { .. } => EXIT_CAP,
                E::Replica { source, .. } => CliError::Core((**source).clone()).exit_code(),
                _ => EXIT_USAGE,
            },
        }
    }
}
