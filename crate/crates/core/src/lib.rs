//! Causal knowledge graphs from ranked biomedical abstracts, multiple-choice
//! probes synthesized from graph structure, and retrieval-augmented QA
//! evaluation with significance reporting.

pub mod config;
pub mod corpus;
pub mod error;
pub mod jsonl;
pub mod kg;
pub mod llm;
pub mod probe;
pub mod rag;
pub mod stats;
pub mod text;

pub use error::{Error, Result};
