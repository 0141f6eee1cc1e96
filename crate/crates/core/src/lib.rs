pub mod baselines;
pub mod calibration;
pub mod config;
pub mod driver;
pub mod encoder;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod request;
pub mod rng;
pub mod rollout;
pub mod tabular;

pub use error::{Error, Result};
