//! Two-stage fMRI-to-video decoding pipeline with pluggable backends.
//!
//! Stage one decodes semantic, structure and motion features from voxel
//! vectors; stage two folds those features back into pixel frames. The crate
//! ships deterministic toy backends for every external model the pipeline
//! would normally lean on, a synthetic generator with known ground truth,
//! the full metric suite, and the interpretability tooling.

pub mod analysis;
pub mod cmg;
pub mod container;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod graph;
pub mod nn;
pub mod semantic;
pub mod structure;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tensor::Mat;
