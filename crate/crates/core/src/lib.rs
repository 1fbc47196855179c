//! Gaussian variational EM estimation for the multidimensional generalized
//! partial credit model.

pub mod bootstrap;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod io;
mod linalg;
pub mod model;
pub mod oracle;
pub mod rotation;
pub mod selection;
pub mod simulator;
pub mod variational;

pub use engine::{fit, fit_from, FitConfig, FitResult};
pub use error::{Error, Result};
pub use model::{irf_probability, log_joint, ItemParameters, LatentSpec, Mode, ResponseMatrix, VariationalState};
