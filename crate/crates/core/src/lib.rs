//! Unsupervised feature decomposition (UFD) of frozen document embeddings.
//!
//! Each embedding is split into a domain-invariant part and a domain-specific
//! part by two small extractors trained with neural mutual-information
//! estimators. A task classifier is then trained on the decomposed features
//! with the extractors frozen.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense matrices, linear layers, activations, Adam, the seeded
//!   generator and the finite-difference gradient checker.
//! - [`mi`]: pair discriminators, the Jensen-Shannon and Donsker-Varadhan
//!   estimators, and in-batch negative pairing.
//! - [`model`]: the two extractors, the loss terms and the training step.
//! - [`head`]: the task classifier.
//! - [`data`]: binary embedding files, label files, manifests, the synthetic
//!   generator and the 2-D projection export.
//! - [`pipeline`]: two-stage training, model selection, evaluation and grids.
//!
//! All arithmetic is `f64` and every random draw comes from [`nn::Rng`], so a
//! run is reproducible bit-for-bit from its seed.

pub mod bench;
pub mod data;
pub mod error;
pub mod head;
pub mod mi;
pub mod model;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
