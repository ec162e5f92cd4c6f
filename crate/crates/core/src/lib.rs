//! Bayes-risk lower bounds for squared-error estimation.
//!
//! [`model`] holds the scalar catalog, [`integrate`] the deterministic
//! quadrature and seeded Monte Carlo, [`testfn`] the test functions,
//! [`bounds`] and [`matrix_bounds`] the scalar and matrix inequalities,
//! [`optimize`] the (h, s) search and [`cli`] the command-line front end.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod format;
pub mod integrate;
pub mod matrix_bounds;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod testfn;

pub use error::{Error, Result};
