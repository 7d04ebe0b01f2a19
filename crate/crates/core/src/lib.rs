//! Concept-vector analysis of language-model activations.
//!
//! The pipeline pools per-token hidden states into statement vectors, takes
//! the per-layer difference of positive and negative class means as a
//! concept vector, compares concepts by cosine similarity of their
//! layer-averaged vectors, derives a percentile significance threshold from a
//! baseline concept set, and scores trust models against an anchor concept.

pub mod activations;
pub mod alignment;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod report;
pub mod similarity;
pub mod synth;
pub mod vectors;

pub use error::{Error, Result};
