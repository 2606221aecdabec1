//! Predicate-graph analysis of detection rule histories.
//!
//! `pgir` mines a git repository of Splunk SPL detection rules, parses each
//! rule version into a canonical predicate graph (an AND/OR tree over typed
//! atomic predicates with leaf polarity), aligns adjacent versions, scores
//! each revision with a weighted predicate edit distance, labels the
//! structural operations a revision performs, and aggregates the resulting
//! revision stream into longitudinal analytics. An optional intent stage
//! labels each revision with a language-model rationale and cross-validates
//! those labels against the structural evidence.
//!
//! The `examples/` directory contains one runnable example per capability;
//! the thin `pgir` binary exposes the same library surface as subcommands.

pub mod align;
pub mod analytics;
pub mod cost;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod intent;
pub mod pipeline;
pub mod spl;
pub mod structops;
pub mod util;

pub use error::{Error, Result};
