//! Experimentation harness for multilabel clinical named-entity recognition.
//!
//! The pipeline stages exchange plain files: a JSONL standoff corpus, split
//! and weight files, tag-matrix and prediction JSONL, metric reports. Every
//! stage is available both as a library call and as a subcommand of the
//! `ner-harness` binary.

pub mod artifact;
pub mod cli;
pub mod corpus;
pub mod imbalance;
pub mod llm;
pub mod metrics;
pub mod stratify;
