//! Error type shared by every module in the crate.

/// Crate-wide error enum.
///
/// Variants map onto the CLI exit-code contract: `Config` → 2,
/// `Data`/`Format`/`Io` → 3, `Protocol` → 4, everything else → 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensor shapes that must agree do not.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A shape is malformed (zero dimension, rank too high, length mismatch).
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    /// An input is degenerate for the requested operation (e.g. zero norm).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A class or element index is out of range.
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// An API contract was violated (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value or unresolvable path.
    #[error("config error: {0}")]
    Config(String),

    /// Bad or insufficient data (empty dataset, infeasible generation).
    #[error("data error: {0}")]
    Data(String),

    /// A serialized file does not match its format.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// The incremental-session protocol was violated (class collisions,
    /// session/spec mismatches).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A prerequisite artifact (e.g. an earlier training stage) is missing.
    #[error("dependency error: {0}")]
    Dependency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
