//! File formats, run configuration, synthetic data, and exports.

pub mod cases;
pub mod config;
pub mod export;
pub mod masks;
pub mod synthetic;

pub use config::RunConfig;
