//! Quantum leaky integrate-and-fire (QLIF) neurons as closed-form kernels,
//! spiking networks built from them, and surrogate-gradient training.
//!
//! The crate is `no_std` and only needs `alloc`. IO, datasets, checkpoints
//! and the command line live in the `qlif` crate.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod encoding;
pub mod error;
pub mod network;
pub mod neuron;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
