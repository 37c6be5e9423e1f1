pub mod bayes;
pub mod data;
pub mod error;
pub mod estimator;
pub mod freq;
pub mod linalg;
pub mod nngp;
pub mod predict;
pub mod rng;
pub mod sim;
pub mod transform;

pub use error::{Result, SaeError};
