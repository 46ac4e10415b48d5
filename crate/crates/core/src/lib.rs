//! Numerical laboratory for rotationally symmetric Ricci flow in three
//! dimensions: warped-product metrics over an interval or a circle, curvature
//! and flow operators, neck surgery with genealogy tracking, asymptotic
//! decomposition of the resulting spacetimes, and gradient-flow experiments.
//!
//! The numerical layers (`geometry`, `flow`) are generic over the scalar type
//! through [`scalar::Scalar`]; the orchestration layers work at `f64`, and the
//! crate root exports `f64` aliases for the common types.

pub mod error;
pub mod flow;
pub mod geometry;
pub mod scalar;
pub mod singular;

pub use error::{Error, Result};

/// Default scalar type of the laboratory.
pub type Real = f64;

pub type ProfileGrid = geometry::ProfileGrid<Real>;
pub type WarpedMetric = geometry::WarpedMetric<Real>;
pub type CurvatureField = geometry::CurvatureField<Real>;
pub type DumbbellShape = geometry::DumbbellShape<Real>;
pub use geometry::{IsometryElement, Topology};

pub type FlowParams = flow::FlowParams<Real>;
pub type FlowTrajectory = flow::FlowTrajectory<Real>;
pub type StopRules = flow::StopRules<Real>;
pub type DiagRow = flow::DiagRow<Real>;
pub type NeckCandidate = flow::NeckCandidate<Real>;
pub use flow::{Scheme, Termination};

pub use singular::{
    detect_neck, perform_surgery, run_singular_flow, spacetime_isometry_check, ComponentFate,
    ComponentId, ComponentRecord, IsometryReport, SingularSpacetime, SpacetimeSlice,
    SurgeryEvent, SurgeryParams,
};
