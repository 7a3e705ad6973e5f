use alloc::string::String;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("kernel undefined on null atom (path {0})")]
    NullAtom(usize),
    #[error("range error: path {path} maps to {target}, outside the target path set")]
    Range { path: usize, target: usize },
    #[error("size guard: {0}")]
    SizeGuard(String),
    #[error("drift overflow in sample {sample} at step {step}")]
    DriftOverflow { sample: usize, step: usize },
    #[error("non-convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
