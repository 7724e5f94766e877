//! Learning stationary diffusions from samples by minimizing the Stein-type
//! kernel deviation from stationarity (SKDS).

pub mod cli;
pub mod data;
pub mod datagen;
pub mod discrepancy;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod models;
pub mod simulator;
pub mod trainer;

pub use data::Dataset;
pub use error::{Error, Result};
pub use kernels::{Bandwidth, KernelFamily, KernelSpec};
pub use models::{Intervention, ParamGrad, SdeModel};
