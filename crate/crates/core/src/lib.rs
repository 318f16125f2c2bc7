pub mod cli;
pub mod error;
pub mod gradients;
pub mod image;
pub mod pyramid;
pub mod scenario;
pub mod service;
pub mod synth;
pub mod trainer;
pub mod user_loss;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
