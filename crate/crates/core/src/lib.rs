//! Ordinal semantic anchoring for sequential recommenders.
//!
//! A causal self-attention encoder summarizes each user's history; the
//! user state and a candidate item embedding are concatenated and projected
//! into a fixed semantic space that holds five frozen rating anchors. Training
//! combines next-item cross-entropy with a strength-weighted cosine pull of
//! every historical interaction toward its rating's anchor.

pub mod alignment;
pub mod anchors;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod math;
pub mod model;
pub mod pipeline;
pub mod projector;
pub mod seed;
mod tensor;
pub mod training;

pub use error::{Error, Result};
