//! Non-stationary, non-separable space-time Gaussian processes with latent
//! length-scale fields, latent point selection and greedy sensor planning.

pub mod data;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod model;
pub mod nonstationary;
pub mod optimize;
pub mod pipeline;
pub mod planner;
pub mod selection;
pub mod synthetic;

pub use data::{Dataset, Observation, SpaceTimePoint};
pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelSpec};
pub use nonstationary::LatentLengthField;
