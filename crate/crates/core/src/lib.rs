//! Diagnostics for differentially private training: train small encoders
//! with and without DP-SGD, then split the utility lost to privacy into
//! representation displacement, spectral effective dimension, and the gap
//! between a linear probe and the end-to-end model.

pub mod accountant;
mod binio;
pub mod checkpoint;
pub mod dp_optimizer;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod stats;
pub mod synthdata;
pub mod workflow;

pub use error::{Error, Result};
