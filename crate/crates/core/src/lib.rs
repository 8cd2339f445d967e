pub mod baselines;
pub mod curriculum;
pub mod error;
pub mod harness;
pub mod hybrid;
pub mod moe;
pub mod nn;
pub mod rng;
pub mod sac;

pub use error::{Error, Result};
