//! Causal benchmark synthesis from scene graphs.
//!
//! The pipeline runs scene ingestion, causal edge extraction, template
//! matching, oracle answering, question generation, and evaluation of model
//! responses against the generated records.

pub mod client;
pub mod cot;
pub mod dataset;
pub mod eval;
pub mod extract;
pub mod generate;
pub mod oracle;
pub mod quality;
pub mod record;
pub mod robustness;
pub mod scene;
pub mod seed;
