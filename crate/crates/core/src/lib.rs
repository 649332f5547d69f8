//! Noncoherent compressive millimeter-wave beam alignment.
//!
//! The crate models a hardware-impaired phased array probed with
//! pseudo-random sounding beams, emulates the learning-stage data capture
//! (exhaustive DFT sweep labels plus PN-beam RSS features), and compares a
//! dense neural classifier against RSS matching-pursuit baselines.
//!
//! Module map:
//!
//! - [`array`]: ULA response, impairment vectors, single-path channels, beam patterns
//! - [`codebook`]: steering, DFT, PN and concatenated codebooks
//! - [`sounding`]: coherent symbol and noncoherent RSS probing
//! - [`dataset`]: synthetic captures, label filtering, stratified split, JSON-lines files
//! - [`baseline`]: exhaustive selection, magnitude dictionaries, RSS-MP
//! - [`neural`]: the FC/BN/ReLU classifier trained with RMSprop
//! - [`metrics`]: BF gain, accuracy, percentiles, required M, overhead reduction
//! - [`harness`]: experiment drivers and CSV emission

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod baseline;
pub mod codebook;
pub mod dataset;
mod error;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod seed;
pub mod sounding;

pub use error::{Error, Result};
pub use num_complex::Complex64;
