//! Contribution summaries for student team repositories.
//!
//! Line ownership comes from replaying git history; file metrics come from a
//! tokenizer-level analysis; an LLM chain turns both into per-student and
//! per-team reports.

mod diff;
mod git;

pub mod agents;
pub mod attribution;
pub mod identity;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod store;
pub mod synthfix;
pub mod tables;
