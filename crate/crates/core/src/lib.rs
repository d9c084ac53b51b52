//! Multimodal hierarchical document classification: text, image and
//! citation-graph encoders fused into per-level softmax heads, plus the
//! training, evaluation and data plumbing around them.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graphnet;
pub mod han;
pub mod image;
pub mod metrics;
pub mod opt;
pub mod hash;
pub mod textprep;
pub mod train;

pub use error::{Error, Result};
