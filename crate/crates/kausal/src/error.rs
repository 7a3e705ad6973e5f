use std::fmt::Display;

/// Exit code on success.
pub const EXIT_OK: i32 = 0;
/// Exit code for malformed input, bad flags and size guards.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code when a solver stops without converging.
pub const EXIT_NON_CONVERGENCE: i32 = 3;
/// Exit code when the run finished but a verification check failed.
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{context}: {message}")]
    Validation { context: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    NonConvergence { context: String, message: String },
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Io { .. } => EXIT_VALIDATION,
            CliError::NonConvergence { .. } => EXIT_NON_CONVERGENCE,
            CliError::ChecksFailed { .. } => EXIT_CHECK_FAILED,
        }
    }

    pub fn invalid(context: impl Display, message: impl Display) -> Self {
        CliError::Validation { context: context.to_string(), message: message.to_string() }
    }

    /// Wraps a core error, keeping non-convergence distinct.
    pub fn core(context: impl Display, err: kausal_core::Error) -> Self {
        match err {
            kausal_core::Error::NonConvergence { .. } => {
                CliError::NonConvergence { context: context.to_string(), message: err.to_string() }
            }
            other => CliError::invalid(context, other),
        }
    }

    pub fn io(context: impl Display, source: std::io::Error) -> Self {
        CliError::Io { context: context.to_string(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
