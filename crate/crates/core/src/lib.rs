//! Domain-adversarial and multi-task training for raw-waveform digit
//! recognition under a healthy-to-dysarthric domain shift.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`] — a reverse-mode AD graph over dense f64 tensors, with a
//!   finite-difference oracle built in;
//! - [`nn`] — layer and loss builders on top of the graph: raw-waveform 1D
//!   convolution, pooling, dense layers, the gradient reversal layer;
//! - [`model`] — the seven-layer shared extractor with label and domain
//!   heads, the adversarial objective, fine-tuning freezes, checkpoints;
//! - [`corpus`] — the data model: WAV ingestion, manifests, preprocessing,
//!   a deterministic synthetic corpus generator, scenario splits;
//! - [`experiment`] — optimizers, the training loop with early stopping,
//!   the five scenario runners, three-rotation averaging;
//! - [`report`] — word-recognition-rate computation, severity-tier
//!   aggregation, usability flags, report emission.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod report;
pub mod rng;
pub mod tensor;

pub use tensor::Tensor;
