//! Prosody-aware self-attentive constituency parsing for speech transcripts.

pub mod data;
pub mod decoder;
pub mod embeddings;
pub mod encoder;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod prosody;
pub mod synthetic;
pub mod trainer;
pub mod treebank;

pub use treebank::{LabelVocab, LabeledSpan, Tree};
