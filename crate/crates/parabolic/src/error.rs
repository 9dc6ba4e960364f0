//! Crate-wide error type.

/// Errors surfaced by instance construction, encoding, solving, analysis,
/// and serialization.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input uses a feature this toolkit deliberately does not model
    /// (e.g. integer variables in an imported file).
    #[error("unsupported feature: {0}")]
    Unsupported(String),

    /// Text-level failure while reading an external format.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structurally valid input that violates the document schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// The conic subproblem finished without an optimal status.
    #[error("solver failure ({status}): {detail}")]
    SolverFailure { status: String, detail: String },

    /// No grid value produced rank-tight probe rounds.
    #[error("penalty search failed: no grid value achieved tight probe rounds")]
    EtaSearchFailed,

    /// Local search could not produce a feasible point, so no distance upper
    /// bound is available.
    #[error("feasibility distance unavailable: {0}")]
    DistanceUnavailable(String),

    /// Gap percentages are undefined for a zero reference objective.
    #[error("gap undefined: reference objective is zero")]
    GapUndefined,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Invariant breach inside the toolkit (e.g. a model row referencing a
    /// lifted entry missing from the variable map).
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
