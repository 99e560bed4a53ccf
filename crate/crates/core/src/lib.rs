//! Synthetic conversational search data and conversational dense retrieval.
//!
//! The crate covers the full loop: an LLM (or the deterministic mock) writes
//! whole search sessions from topic descriptions or rewrites annotated turns,
//! pseudo-relevance feedback attaches labels to generated turns, a hashed
//! query encoder is fine-tuned with an in-batch contrastive objective against
//! a frozen passage encoder, and runs are scored with TREC-style metrics.

pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod fixture;
pub mod llm;
pub mod pipeline;
pub mod query_aug;
pub mod retrieval;
pub mod session_gen;
pub mod supervision;
pub mod text;
pub mod training;

pub use error::{Error, Result};
