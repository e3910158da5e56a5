//! Sponge poisoning on a small deterministic neural-network engine.
//!
//! The crate trains classifiers whose activations are pushed to be dense,
//! defeating accelerators that skip zero operands, and measures the effect
//! with an operation-count model of such an accelerator. The same machinery
//! with the energy term's sign flipped sanitizes a poisoned model.
//!
//! - [`nn`]: layers, forward/backward, cross-entropy, SGD, checkpoints
//! - [`energy`]: smoothed ℓ0 and ℓ2 activation objectives and their gradients
//! - [`asic`]: zero-skipping operation census, energy ratio/increase, firing profiles
//! - [`train`]: the poisoning / sanitizing training loop and evaluation
//! - [`data`]: datasets, the `SPNGDAT1` format, synthetic generators
//! - [`experiment`]: configs, run reports, sweeps and profiles behind the CLI

pub mod arch;
pub mod asic;
pub mod data;
pub mod energy;
mod error;
pub mod experiment;
pub mod nn;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
