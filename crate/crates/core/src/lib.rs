//! Numerical workbench for gluing scaled BPS monopoles into abelian Dirac
//! monopole backgrounds, measuring the Bogomolny defect in weighted norms,
//! and deforming the glued pair towards a genuine solution.

pub mod algebra;
pub mod analysis;
pub mod cli;
pub mod deformation;
pub mod dirac_global;
pub mod exact_fields;
pub mod geometry;
pub mod gluing;
pub mod linear_system;
pub mod ramp;
pub mod spectral;

pub use algebra::Su2;
