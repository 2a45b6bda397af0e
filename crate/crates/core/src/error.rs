use thiserror::Error;

/// Errors produced by the solenoid toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A descriptor failed validation; `field` is a dotted path into the config.
    #[error("invalid {field}: {reason}")]
    InvalidDescriptor { field: String, reason: String },

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("{what} did not converge within {iters} iterations")]
    NotConverged { what: &'static str, iters: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// The measure fails holonomy invariance at the requested tolerance.
    #[error("measure is not holonomy invariant (residual {residual:e} > tol {tol:e})")]
    NotInvariant { residual: f64, tol: f64 },

    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },

    #[error("degree overflow: {0} exceeds ambient dimension {1}")]
    DegreeOverflow(usize, usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("frequency {0} exceeds cap {1}")]
    FrequencyCap(i64, i64),

    #[error("form is discontinuous across the gluing (residual {0:e})")]
    Gluing(f64),

    #[error("immersion degenerates: |dF/dt| = {0:e}")]
    Degenerate(f64),

    #[error("not an embedding: {0}")]
    NotEmbedding(String),

    #[error("tube radius {r} is not below the disjointness radius {r1}")]
    RadiusTooLarge { r: f64, r1: f64 },

    #[error("transversal measure has atoms (compact leaves)")]
    AtomicMeasure,

    #[error("grid mismatch: {0}")]
    Grid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidDescriptor {
        field: field.into(),
        reason: reason.into(),
    }
}
