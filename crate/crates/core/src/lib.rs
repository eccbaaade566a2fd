//! Entity alignment between two knowledge graphs by multiple-choice
//! reasoning over embedding-retrieved candidates.
//!
//! The stages are split across modules: [`kg_store`] parses and indexes the
//! graphs, [`candidate_index`] retrieves top-k candidates, [`triple_selector`]
//! picks the most discriminative attribute and relation triples,
//! [`prompt_forge`] renders questions, [`llm_gateway`] asks them,
//! [`vote_engine`] aggregates permuted rounds, and [`align_pipeline`] runs the
//! per-entity stages. [`harness`] holds configuration, fixtures and the
//! experiment drivers used by the `kgalign` binary.

pub mod align_pipeline;
pub mod candidate_index;
pub mod harness;
pub mod kg_store;
pub mod llm_gateway;
pub mod prompt_forge;
pub mod triple_selector;
pub mod vote_engine;
