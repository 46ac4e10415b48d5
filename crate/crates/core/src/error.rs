//! Crate-wide error type.
//!
//! Diagnostics are stored as `f64` regardless of the working scalar so the
//! error enum stays non-generic.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received a parameter outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two metrics that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// An interior profile value crossed the positivity floor; the metric must
    /// be treated as singular by the caller, never clamped.
    #[error("degenerate geometry at node {node}: psi = {psi:e}")]
    DegenerateGeometry { node: usize, psi: f64 },

    /// A metric failed validation (non-finite entries, broken pole closure...).
    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    /// The grid is not symmetric under the requested isometry.
    #[error("grid is not reflection symmetric: {0}")]
    AsymmetricGrid(String),

    /// A timestep produced an invalid state; the caller may halve dt and retry.
    #[error("timestep rejected at dt = {dt:e}: {reason}")]
    StepRejected { dt: f64, reason: String },

    /// Surgery cannot cap the requested neck.
    #[error("malformed neck: {0}")]
    MalformedNeck(String),

    /// A soliton trajectory was requested past its extinction time.
    #[error("soliton scale factor vanishes before t = {t}: valid horizon {horizon}")]
    SolitonDomain { t: f64, horizon: f64 },

    /// An experiment precondition (e.g. a symmetry of the base metric) fails.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// An assembled spacetime violates one of its structural invariants.
    #[error("spacetime invariant violated: {0}")]
    SpacetimeInvariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
