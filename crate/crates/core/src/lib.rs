pub mod cli;
pub mod config;
pub mod datapipe;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod imgcore;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
