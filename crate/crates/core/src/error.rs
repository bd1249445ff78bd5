// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by dataset I/O, statistics, selection and ablation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at layer {layer}, sample {sample}, neuron {neuron}")]
    NonFinite {
        layer: usize,
        sample: usize,
        neuron: usize,
    },

    #[error("label count mismatch: expected {expected}, found {found}")]
    LabelCount { expected: usize, found: usize },

    #[error("label out of range: sample {sample} has class index {index} (classes: {num_classes})")]
    LabelRange {
        sample: usize,
        index: u64,
        num_classes: usize,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("dataset failed validation: {0}")]
    Invalid(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("overlapping sample ranges: {0}")]
    OverlappingShards(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("selection step {step} left no neurons")]
    EmptySelection { step: u8 },

    #[error("degenerate statistic at step {step}: {detail}")]
    Degenerate { step: u8, detail: String },

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("mask size {requested} exceeds the {available} eligible neurons")]
    MaskTooLarge { requested: usize, available: usize },

    #[error("prediction runs are misaligned: {0}")]
    Misaligned(String),

    #[error("singular probe normal equations")]
    SingularProbe,

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Wraps an I/O error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
