//! Reconstruction of the piecewise-linear control driving a controlled
//! differential equation `dY = g(Y) dt + f(Y) dX` from observations of `Y`
//! on a homogeneous time grid.
//!
//! Two inverters are provided:
//!
//! * [`newton`]: per-interval Newton-Raphson shooting. Each interval is
//!   solved independently from the observed start value, so slope errors
//!   accumulate along the reconstructed path.
//! * [`signature`]: the signature iteration. The whole path is propagated
//!   forward and corrected at every knot by the inverse Itô integral along
//!   the straight segment joining the propagated response to the
//!   observation. Knot errors are corrected directly, so they do not
//!   accumulate.
//!
//! The [`experiment`] module wires both into a reproducible harness driven by
//! JSON configs (see the `cde-inverse` binary).

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod field;
pub mod io;
pub mod metrics;
pub mod newton;
pub mod ode;
pub mod path;
pub mod signature;
pub mod trace;

pub use error::{Error, Result};
pub use field::{ModelSpec, ValidationReport, VectorField};
pub use metrics::ErrorReport;
pub use newton::NewtonConfig;
pub use ode::{FlowResult, IntegratorConfig, Scheme};
pub use path::{ObservationGrid, PiecewiseLinearPath};
pub use signature::SignatureConfig;
pub use trace::{IterationTrace, Method};

/// Points in state or control space.
pub type Point = nalgebra::DVector<f64>;
/// Dense matrices (diffusion, sensitivities, inverses).
pub type Matrix = nalgebra::DMatrix<f64>;
