use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capacity error: {n} qubits exceeds the cap of {cap}")]
    Capacity { n: usize, cap: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },
    #[error("positivity violated at t = {t}: minimum eigenvalue {min_eig:e}")]
    Positivity { t: f64, min_eig: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("logic error: {0}")]
    Logic(String),
    #[error("{} of the ensemble members failed (seeds {failed:?}): {first}", failed.len())]
    Ensemble { failed: Vec<u64>, first: String },
}

pub type Result<T> = std::result::Result<T, Error>;
