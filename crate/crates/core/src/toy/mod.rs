// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale synthetic benchmark: planted datasets and a toy encoder
//! pipeline that exercise identification, overlap and ablation end to end.

pub mod encoder;
pub mod pipeline;
pub mod plant;
pub mod probe;

pub use encoder::ToyEncoder;
pub use pipeline::{run_toy_pipeline, write_pipeline_outputs, PipelineReport, PipelineRun, ToySpec};
pub use plant::{generate_planted_dataset, planted_dataset, recovery, PlantMap, PlantSpec, Recovery};
pub use probe::LinearProbe;
