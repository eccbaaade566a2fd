//! Knowledge graph storage for one side of an alignment task.
//!
//! Graphs are parsed from the tab-separated files of the DBP15K distribution
//! (`ent_ids_*`, `rel_ids_*`, `triples_*`, `att_triples_*`, `ref_ent_ids`),
//! validated for referential integrity and then frozen. After [`build_graph`]
//! returns, a [`KnowledgeGraph`] is read-only and can be shared freely
//! between threads.

mod graph;
mod label;
mod parse;
pub mod snapshot;

pub use graph::{build_graph, EntityIndex, GraphStats, KnowledgeGraph};
pub use label::label_from_uri;
pub use parse::{
    parse_attribute_triples, parse_attribute_triples_from, parse_entity_file, parse_entity_lines,
    parse_gold, parse_gold_lines, parse_relation_file, parse_relational_triples,
    parse_relational_triples_from, read_side, write_gold, write_side, AttributeParse,
    GoldAlignment, SideFiles,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                Self(v)
            }
        }
    };
}

id_newtype!(
    /// Dataset-local entity id.
    EntityId
);
id_newtype!(
    /// Dense relation id.
    RelationId
);
id_newtype!(
    /// Dense attribute id, assigned in order of first appearance.
    AttributeId
);

/// An entity of one graph side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub id: EntityId,
    pub uri: String,
    /// Human-readable name; always `label_from_uri(&uri)`.
    pub label: String,
}

impl EntityRef {
    pub fn new(id: EntityId, uri: impl Into<String>) -> Self {
        let uri = uri.into();
        let label = label_from_uri(&uri);
        Self { id, uri, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationalTriple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeTriple {
    pub head: EntityId,
    pub attribute: AttributeId,
    pub value: String,
}

pub type EntityMap = BTreeMap<EntityId, EntityRef>;
pub type RelationMap = BTreeMap<RelationId, String>;
pub type AttributeMap = BTreeMap<AttributeId, String>;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id}")]
    DuplicateId { path: PathBuf, line: usize, id: u32 },
    #[error("{path}:{line}: unknown entity id {id}")]
    DanglingReference { path: PathBuf, line: usize, id: u32 },
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

impl KgError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KgError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Which graph of the pair an entity lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}
