//! Parallel spiking neurons with Bernoulli membrane-potential estimation.
//!
//! The crate contains the sequential LIF reference, the time-parallel
//! estimated-membrane neuron, the membrane approximation and classification
//! losses, a small reverse-mode tape with surrogate gradients, a toy spiking
//! classifier with its training loop, synthetic datasets, and a wall-clock
//! benchmark of sequential versus parallel forward passes.

pub mod autograd;
pub mod bench;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod io;
pub mod losses;
pub mod network;
pub mod neuron;
pub mod numerics;

pub use error::{Error, Result};
