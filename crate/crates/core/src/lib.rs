//! Toolkit for generating energy-efficient approximate neural networks.
//!
//! The pieces, in pipeline order:
//!
//! - [`model`]: a small f64 network framework (conv, dense, residual blocks) with training;
//! - [`axmul`]: 8-bit multiplier lookup tables, synthesis and weight mapping;
//! - [`axexec`]: int8 quantization and LUT-based approximate inference with neuron skipping;
//! - [`attrib`]: neuron conductance, layer importance and noise resilience;
//! - [`podmodel`]: the analytical memory/compute energy model of a multi-pod systolic array;
//! - [`xaigen`]: conductance-guided generation of an approximate network;
//! - [`nas`]: NSGA-II search over per-layer multipliers and skip levels;
//! - [`report`] and [`commands`]: versioned run reports and the command layer of the `axforge` binary.

pub mod attrib;
pub mod axexec;
pub mod axmul;
pub mod commands;
pub mod data;
pub mod error;
pub mod model;
pub mod nas;
pub mod podmodel;
pub mod report;
pub mod xaigen;

pub use error::{Error, Result};
