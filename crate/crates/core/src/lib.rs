pub mod assignment;
pub mod baselines;
pub mod cli;
pub mod commander;
pub mod envs;
pub mod error;
pub mod executor;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
