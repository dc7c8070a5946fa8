//! Cross-video cycle-consistent contrastive learning at desk scale.
//!
//! The crate bundles a small reverse-mode differentiation engine, an MLP
//! encoder with a momentum (key) copy, a FIFO memory queue of key embeddings,
//! the intra-image / intra-video / cross-video cycle contrastive objectives,
//! a procedural toy-video generator, a training loop and frozen-feature
//! evaluation (linear probe and k-NN retrieval).

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod losses;
pub mod queue;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
