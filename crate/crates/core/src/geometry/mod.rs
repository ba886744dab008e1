//! Grids, metrics, forms and the finite-difference exterior calculus on them.

pub mod forms;
pub mod grid;
pub mod metric;
pub mod ops;

use thiserror::Error;

pub use forms::{hodge_star, l2_inner, l2_norm, ConnectionField, FormField};
pub use grid::{DomainKind, Excision, Grid, GridDomain, Point};
pub use metric::{MetricField, MetricModel, Riemann};
pub use ops::{codifferential, covariant_d, curvature};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("metric is singular (det g = {det:e})")]
    MetricSingular { det: f64 },
    #[error("field sampled on {found} points but grid has {expected}")]
    DomainMismatch { expected: usize, found: usize },
    #[error("operation not defined on forms of degree {0}")]
    DegreeUnsupported(u8),
}
