//! Grammar-driven data synthesis for zero-shot semantic parsers.
//!
//! This crate is `no_std` (it needs `alloc`). It holds the pure parts of the
//! toolkit: the synchronous grammar and its chart parser, the lambda-calculus
//! program algebra, the database executor, exhaustive synthesis, naturalness
//! selection, the paraphrase/filter loop, scoring and the evaluation metrics.
//! File IO, JSONL persistence, HTTP adapters and the CLI live in the
//! `synthparse` crate.
#![no_std]

extern crate alloc;

pub mod dataset;
pub mod executor;
pub mod grammar;
pub mod metrics;
pub mod paraphrase;
pub mod program;
pub mod scorer;
pub mod selection;
pub mod sexpr;
pub mod synthesis;

pub use dataset::{Dataset, DatasetName, Example, Provenance};
pub use executor::{Database, Denotation, ExecutionError, Value};
pub use grammar::{Grammar, Production, SemanticFn};
pub use program::{Program, TemplateKey};

/// Lowercases and whitespace-splits a string into tokens.
pub fn tokenize(text: &str) -> alloc::vec::Vec<alloc::string::String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}
