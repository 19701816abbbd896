pub mod analytics;
pub mod chain;
pub mod cluster;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod flow;
pub mod pipeline;
pub mod split;
pub mod stats;
pub mod synth;
pub mod validation;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
