//! Workbench library: configuration, synthetic corpora, model training
//! stages, and the end-to-end retrieve/generate/evaluate pipeline.

pub mod config;
pub mod data;
pub mod models;
pub mod pipeline;
