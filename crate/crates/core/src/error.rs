use thiserror::Error;

/// Errors produced by the restoration library.
#[derive(Debug, Error)]
pub enum Error {
    /// A dimension of one operand does not agree with the other operand.
    #[error("{op}: {dim} mismatch (expected {expected}, got {got})")]
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },

    /// An extent must be divisible by a factor and is not.
    #[error("{op}: {dim} extent {extent} is not divisible by {divisor}")]
    NotDivisible {
        op: &'static str,
        dim: &'static str,
        extent: usize,
        divisor: usize,
    },

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("{context}: non-finite value encountered")]
    NonFinite { context: String },

    /// Cube values must lie in [0,1].
    #[error("{context}: value {found} at flat index {index} outside [0,1]")]
    ValueOutOfRange {
        context: &'static str,
        found: f64,
        index: usize,
    },

    /// A mask entry was neither 0 nor 1.
    #[error("mask: value {found} at flat index {index} is not binary")]
    NonBinaryMask { found: f64, index: usize },

    /// The mask observes no pixels at all, so the job is unconstrained.
    #[error("mask has no observed pixels; the restoration is ill-posed")]
    EmptyMask,

    /// Every spectrum in at least one cube has zero norm.
    #[error("spectral angle undefined: all spectra have zero norm")]
    AllSpectraZero,

    /// Backpropagation was requested from a non-scalar node.
    #[error("backward: loss node has {len} elements, expected a scalar")]
    LossNotScalar { len: usize },

    /// The image is smaller than the similarity window.
    #[error("mssim: spatial extent {extent} smaller than window size {window}")]
    WindowTooSmall { extent: usize, window: usize },

    /// A run or architecture configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
