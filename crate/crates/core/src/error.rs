use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChbError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("grid shape mismatch for {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("resolvent bracket not found for s = {s} after {doublings} doublings; the shifted derivative is not monotone")]
    Bracket { s: f64, doublings: u32 },
    #[error("invalid potential: {0}")]
    Potential(String),
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("increment carries {got} modes but the noise model is truncated at {expected}")]
    Truncation { expected: usize, got: usize },
    #[error("invalid physical parameters: {0}")]
    Params(String),
    #[error("invalid scheme: {0}")]
    Scheme(String),
    #[error("Brinkman matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("non-finite state at step {step} (t = {time}); dt is likely too large for the explicit part")]
    NonFinite { step: usize, time: f64 },
}

pub type Result<T> = std::result::Result<T, ChbError>;
