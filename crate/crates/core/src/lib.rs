//! Numerical toolkit for light-ray transforms on stationary spacetimes.
//!
//! The crate integrates null geodesics of metrics of the form
//! `-(kappa - |eta|^2) dt^2 + dt (x) eta + eta (x) dt + g` over a spatial chart,
//! evaluates ray transforms of symmetric tensor fields along them, performs
//! Helmholtz-type decompositions of gridded tensor fields with sparse elliptic
//! solves, and reconstructs scalar space-time functions from light-ray data by
//! Fourier slicing plus filtered backprojection.
//!
//! Organization mirrors the pipeline:
//!
//! - [`tensor`]: dense symmetric fiber algebra (products, traces, projections)
//! - [`geometry`]: charted manifolds, tensor fields, covariant derivatives
//! - [`stationary`]: spacetime metric assembly and the reduced-curve drift field
//! - [`ray`]: curve/geodesic integrators, inflow sampling, foliation checks
//! - [`transform`]: light-ray, geodesic, moment, and sliced transforms
//! - [`grid`]: gridded fields and elliptic Helmholtz decompositions
//! - [`recon`]: sinogram scanning, slice inversion, scalar reconstruction
//! - [`suites`]: reproducible verification suites with JSON reports

pub mod error;
pub mod quad;
pub mod tensor;
pub mod geometry;
pub mod fields;
pub mod stationary;
pub mod ray;
pub mod transform;
pub mod grid;
pub mod recon;
pub mod report;
pub mod suites;
pub mod io;

pub use error::{CoreError, Result};
pub use geometry::{ChartedManifold, Christoffel, SymTensorField};
