// SPDX-License-Identifier: MIT OR Apache-2.0

//! Identification of class-specific neurons from activation probabilities,
//! overlap analysis between class neuron sets, and ablation reporting.

pub mod ablation;
pub mod cli;
pub mod error;
pub mod overlap;
pub mod report;
pub mod rng;
pub mod select;
pub mod stats;
pub mod store;
pub mod toy;

pub use error::{Error, Result};
