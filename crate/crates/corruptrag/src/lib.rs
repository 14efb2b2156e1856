//! Knowledge-corpus poisoning attacks and defenses for retrieval-augmented
//! generation, reproducible at desk scale.
//!
//! The toolkit builds a poisoned knowledge store, runs the standard two-step
//! RAG pipeline (retrieve top-N, then generate), measures attack success, and
//! evaluates four defenses. Everything runs offline by default against
//! deterministic scripted providers; OpenAI-compatible HTTP providers can be
//! swapped in through the run config.
//!
//! Module layout:
//!
//! ```text
//! corpus     documents, targeted queries, store snapshots, injection
//! embedder   embedding vectors, similarity, offline/remote providers, cache
//! retriever  exact top-N retrieval and relevance audits
//! generator  prompt scaffold, chat providers, cost ledger
//! attacks    poison crafting (template, refined, instruction, generated)
//! defenses   paraphrasing, prompt hardening, detection, knowledge expansion
//! harness    judging, metrics, experiment runner, report emission
//! scripted   deterministic provider doubles used by the offline pipeline
//! config     run configuration file schema
//! ```

pub mod attacks;
pub mod config;
pub mod corpus;
pub mod defenses;
pub mod embedder;
pub mod error;
pub mod generator;
pub mod harness;
pub mod remote;
pub mod retriever;
pub mod scripted;

pub use error::{Error, Result};
