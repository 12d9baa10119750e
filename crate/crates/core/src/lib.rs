//! Simulation of elliptic diffusions through their orthonormal frame bundle.
//!
//! The driving fields of an SDE `dX = A_0 dt + A_i dB^i` are read as an
//! orthonormal frame of a Riemannian metric. From there the crate provides:
//!
//! - [`noise`]: Brownian increments with iterated integrals and Chen coarsening.
//! - [`geometry`]: structure constants, Christoffel symbols, covariant
//!   derivatives and basic horizontal fields.
//! - [`schemes`]: Euler–Maruyama, Milstein, frame-bundle Milstein, CMT, the
//!   flat 2D-θ scheme, Alves–Cruzeiro and Castell–Gaines steps.
//! - [`development`]: rolling of curves onto embedded surfaces and Brownian
//!   motion on the sphere by Lie group integration on SO(3).
//! - [`convergence`]: coupled strong errors, weak errors, empirical
//!   Wasserstein-2 distances and order fits.
//!
//! The numerical core is generic over the scalar type; the aliases below fix
//! it to `f64`, which is what the experiment harness uses.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bundle;
pub mod convergence;
pub mod development;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod noise;
pub mod presets;
pub mod scalar;
pub mod schemes;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
pub type StepInput = noise::StepInput<f64>;
pub type WienerIncrements = noise::WienerIncrements<f64>;
pub type FramePoint = geometry::FramePoint<f64>;
pub type ConnectionEval = geometry::ConnectionEval<f64>;
pub type LocalGeometry = geometry::LocalGeometry<f64>;
pub type State = schemes::State<f64>;
pub type RollingState = development::RollingState<f64>;
