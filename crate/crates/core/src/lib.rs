//! Dynamic corrective self-distillation at desk scale.
//!
//! A student classifier is fine-tuned under a frozen teacher of the same
//! architecture. After a warm-up epoch of plain distillation, each epoch
//! starts by comparing teacher and student predictions on the training set
//! and up-weighting the distillation loss of the samples they disagree on.
//!
//! - [`tensor`]: dense tensors with a define-by-run reverse-mode tape
//! - [`model`]: linear, MLP and one-block transformer classifiers
//! - [`losses`]: cross-entropy, distillation and weighted distillation
//! - [`engine`]: the epoch loop, agreement maps and weighting strategies
//! - [`data`]: synthetic tasks, hashed text tasks, subsampling
//! - [`checkpoint`]: versioned JSON model checkpoints

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
