//! Corpus curation, curriculum sampling, masking, a compact trainable encoder
//! and evaluation metrics for domain-adapted encoder pretraining.

pub mod corpus;
pub mod curriculum;
pub mod dedup;
pub mod encoder;
pub mod error;
pub mod evalset;
pub mod filter;
pub mod ingest;
pub mod lexer;
pub mod masking;
pub mod metrics;
pub mod retrieval;
pub mod seed;

pub use error::{ForgeError, Result};
