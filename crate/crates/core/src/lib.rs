//! Diffeomorphic registration and variational grid generation.
//!
//! Maps are stored as absolute voxel coordinates with the identity on the
//! boundary. Every map is built from a Poisson solve
//! `laplacian(phi) = grad f - curl g`, so its Jacobian determinant and curl
//! are steered through the controls `f` and `g`.
//!
//! * [`field`]: lattice and containers.
//! * [`diffops`]: stencils, the spectral Poisson solver, warping.
//! * [`vpgrid`]: grid generation with prescribed Jacobian and curl, inversion.
//! * [`register`]: the penalty and control registration engines.
//! * [`metrics`]: overlap, intensity and transformation quality measures.

pub mod diffops;
pub mod error;
pub mod field;
pub mod metrics;
pub mod phantom;
pub mod register;
pub mod schedule;
pub mod vpgrid;

pub use error::{Error, Result};
pub use field::{Domain, LabelVolume, ScalarField, Transform, VectorField};
