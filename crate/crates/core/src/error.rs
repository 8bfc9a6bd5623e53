use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vector must have at least 2 entries, got {0}")]
    TooShort(usize),

    #[error("entry {index} is not finite")]
    NonFinite { index: usize },

    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },

    #[error("entries sum to {sum}, expected 1")]
    SumNotOne { sum: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("reference distribution has zero mass at index {index}")]
    SupportMismatch { index: usize },

    #[error("distribution is not fully supported (entry {index} = {value})")]
    NotFullySupported { index: usize, value: f64 },

    #[error("point-mass source: 1 - ||p||^2 vanishes")]
    DegenerateSource,

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("row {row} is not a probability vector: {reason}")]
    NotRowStochastic { row: usize, reason: String },

    #[error("matrix is singular or too ill-conditioned (relative smallest singular value {0:e})")]
    SingularMatrix(f64),

    #[error("alphabet size must be at least 2, got {0}")]
    InvalidAlphabet(usize),

    #[error("privacy level must be finite and positive, got {0}")]
    InvalidEpsilon(f64),

    #[error("not a permutation of 0..{0}")]
    NotAPermutation(usize),

    #[error("sample {value} at position {position} is outside the alphabet 1..={k}")]
    OutOfAlphabet {
        position: usize,
        value: i64,
        k: usize,
    },

    #[error("empty sample")]
    EmptySample,

    #[error("f-divergence `{0}` is not supported here: {1}")]
    UnsupportedSpec(String, &'static str),

    #[error("negative variance {value} at index {index}")]
    NegativeVariance { index: usize, value: f64 },

    #[error("p0 = {p0} must satisfy 0 < p0 < 1/K (K = {k})")]
    InvalidP0 { p0: f64, k: usize },

    #[error("solver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("could not draw a full-rank mechanism after {0} attempts")]
    RetriesExhausted(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trial {trial} failed: {source}")]
    TrialFailed {
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
