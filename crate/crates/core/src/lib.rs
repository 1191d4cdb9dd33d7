//! Storage and retrieval efficiency of a two-level quantum memory based on
//! controlled reversible inhomogeneous broadening.
//!
//! The model is dimensionless: times are in units of the inverse memory
//! bandwidth `1/μ`, detunings in units of `μ`, and position runs over
//! `z ∈ [0, 1]`.

pub mod analytic;
pub mod error;
pub mod kernels;
pub mod laplace;
pub mod model;
pub mod modes;
pub mod oracle;
pub mod propagators;
pub mod quadrature;

pub use error::{CribError, Result};
pub use num_complex::Complex64;
