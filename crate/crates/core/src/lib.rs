//! Finite element solver for the stochastic Stokes equations on the unit
//! square, driven by multiplicative scalar noise, with a Milstein-type
//! implicit time discretization and Monte Carlo convergence studies.

pub mod assembly;
pub mod error;
pub mod experiment;
pub mod femspace;
pub mod linsolve;
pub mod manufactured;
pub mod mesh;
pub mod norms;
pub mod stepper;
pub mod stochastic;

pub use error::{Error, Result};
