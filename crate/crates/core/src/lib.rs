//! Unpaired translation of single-channel biosignal segments with dual
//! diffusion bridges.

pub mod bridge;
pub mod diffusion;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod synth;

pub use error::{Error, Result};
pub use preprocess::Modality;
