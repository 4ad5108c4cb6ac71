//! Masked graph autoencoder for self-supervised node and graph
//! representation learning.
//!
//! Pretraining corrupts a random subset of node features with a learnable
//! `[MASK]` token, encodes the corrupted graph with a GNN, replaces the
//! codes of the masked nodes with a second learnable `[DMASK]` token, and
//! decodes with another GNN. The reconstruction of the masked nodes'
//! original features is scored with the scaled cosine error. Frozen
//! encoder embeddings are then evaluated with linear probes.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod masking;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
