//! Clipped stochastic first-order methods under heavy-tailed gradient noise:
//! optimizers, the hyperparameter schedules that go with them, rate sweeps
//! and Monte-Carlo checks of the underlying concentration bounds.

pub mod conclab;
pub mod config;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod io;
pub mod math;
pub mod optim;
pub mod problems;
pub mod schedules;
pub mod svg;

pub use error::{Error, Result};
pub use math::{clip, ParamVec, RngStream};
pub use optim::{run, RunOptions, TrialRecord};
pub use problems::{make_quadratic, make_robust_regression, NoiseKind, NoiseModel, Problem};
pub use schedules::{Algorithm, Measure, Schedule};

/// Crate version, stamped into every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
