//! Spatial cell-graph construction and classification for nucleus-annotated
//! tissue images.
//!
//! The pipeline: instance masks → per-nucleus features (morphometry, GLCM
//! texture, contrastive-predictive-coding embeddings) → k-nearest-neighbor
//! cell graphs → a GraphSAGE + self-attention-pooling classifier trained
//! from graph-level labels only. Everything learned runs on the in-crate
//! reverse-mode autodiff tape.

pub mod config;
pub mod cpc;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gnn;
pub mod gradsuite;
pub mod graph;
pub mod imgio;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
