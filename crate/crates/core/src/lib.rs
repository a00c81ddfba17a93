//! Simulated resistive-memory crossbars and randomly weighted networks
//! trained by pruning their topology instead of tuning conductance.
//!
//! The crate is layered bottom-up: [`device`] models cells and arrays,
//! [`vmm`] runs bit-sliced products on them, [`nn`] holds the layer zoo and
//! the two backbones, [`hw`] maps a network onto banks, and [`train`]
//! implements topology optimization and the weight-optimization baseline.

pub mod cli;
pub mod config;
pub mod data;
pub mod device;
pub mod dist;
pub mod energy;
pub mod error;
pub mod grid;
pub mod hw;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod snapshot;
pub mod tensor;
pub mod train;
pub mod vmm;

pub use error::{Error, Result};
pub use tensor::Tensor;
