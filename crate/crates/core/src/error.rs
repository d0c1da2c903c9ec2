use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix data has {found} values, expected {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, found: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch { op: &'static str, expected: (usize, usize), found: (usize, usize) },

    #[error("{op}: matrix must be square, found {rows}x{cols}")]
    NotSquare { op: &'static str, rows: usize, cols: usize },

    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("{op}: singular vectors were not computed")]
    VectorsAbsent { op: &'static str },

    #[error("rank {r} out of range, numerical rank is {rank}")]
    RankOutOfRange { r: usize, rank: usize },

    #[error("variance threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("materialized interaction matrix too large: d_model {d_model} exceeds {limit}")]
    GuardExceeded { d_model: usize, limit: usize },

    #[error("pool mixes spectra of length {expected} and {found}")]
    InconsistentPool { expected: usize, found: usize },

    #[error("invalid fixture spec: {0}")]
    InvalidFixture(&'static str),

    #[error("chain check needs at least 2 steps, got {0}")]
    TooFewSteps(usize),

    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
