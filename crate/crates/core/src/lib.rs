//! Reaction-diffusion compartment models on a rectangular district, with
//! finite-difference and finite-element solvers and parameter estimation
//! against regional case counts.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimate;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod models;
pub mod objective;
pub mod scenario;
pub mod solver_cn;
pub mod solver_fem;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::{FieldSet, GridSpec, RegionMask};
pub use io::RunConfig;
pub use models::{ModelKind, ParameterVector, RateSchedule};
pub use scenario::Scenario;
pub use trajectory::{Backend, Storage, Trajectory};
