//! Binary cache of a parsed dataset.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, then a bincode
//! body. The body records the length and mtime of every source file; a
//! snapshot whose fingerprints no longer match is treated as stale and the
//! caller falls back to a cold parse.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};

use super::{
    build_graph, AttributeMap, AttributeTriple, EntityMap, GoldAlignment, KgError, KnowledgeGraph,
    RelationMap, RelationalTriple,
};

const MAGIC: &[u8; 8] = b"KGASNAP\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFingerprint {
    pub path: PathBuf,
    pub len: u64,
    pub mtime_ns: u128,
}

impl FileFingerprint {
    pub fn of(path: &Path) -> Result<Self, KgError> {
        let meta = fs::metadata(path).map_err(|e| KgError::io(path, e))?;
        let mtime_ns = meta
            .modified()
            .ok()
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        Ok(Self {
            path: path.to_path_buf(),
            len: meta.len(),
            mtime_ns,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphParts {
    entities: EntityMap,
    relations: RelationMap,
    attributes: AttributeMap,
    rel_triples: Vec<RelationalTriple>,
    att_triples: Vec<AttributeTriple>,
}

impl GraphParts {
    fn from_graph(g: &KnowledgeGraph) -> Self {
        Self {
            entities: g.entities().clone(),
            relations: g.relations().clone(),
            attributes: g.attributes().clone(),
            rel_triples: g.rel_triples().to_vec(),
            att_triples: g.att_triples().to_vec(),
        }
    }

    fn into_graph(self) -> Result<KnowledgeGraph, KgError> {
        build_graph(
            self.entities,
            self.relations,
            self.attributes,
            self.rel_triples,
            self.att_triples,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Body {
    fingerprints: Vec<FileFingerprint>,
    source: GraphParts,
    target: GraphParts,
    skipped: [usize; 2],
    gold: GoldAlignment,
}

/// A parsed graph pair plus its gold alignment.
#[derive(Debug, Clone)]
pub struct GraphPair {
    pub source: KnowledgeGraph,
    pub target: KnowledgeGraph,
    /// Attribute lines skipped per side for naming unknown entities.
    pub skipped: [usize; 2],
    pub gold: GoldAlignment,
}

pub fn write(
    path: &Path,
    pair: &GraphPair,
    fingerprints: Vec<FileFingerprint>,
) -> Result<(), KgError> {
    let body = Body {
        fingerprints,
        source: GraphParts::from_graph(&pair.source),
        target: GraphParts::from_graph(&pair.target),
        skipped: pair.skipped,
        gold: pair.gold.clone(),
    };
    let file = File::create(path).map_err(|e| KgError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| KgError::io(path, e))?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())
        .map_err(|e| KgError::io(path, e))?;
    bincode::serialize_into(&mut w, &body).map_err(|e| KgError::Snapshot(e.to_string()))?;
    w.flush().map_err(|e| KgError::io(path, e))
}

/// Load a snapshot if it exists, has the current version and its recorded
/// fingerprints equal `expected`. Returns `Ok(None)` for a missing or stale
/// snapshot.
pub fn read_if_fresh(
    path: &Path,
    expected: &[FileFingerprint],
) -> Result<Option<GraphPair>, KgError> {
    let Ok(file) = File::open(path) else {
        return Ok(None);
    };
    let mut r = BufReader::new(file);
    let mut header = [0u8; 12];
    if r.read_exact(&mut header).is_err() || &header[..8] != MAGIC {
        return Ok(None);
    }
    let version = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Ok(None);
    }
    let body: Body = match bincode::deserialize_from(&mut r) {
        Ok(b) => b,
        Err(_) => return Ok(None),
    };
    if body.fingerprints != expected {
        return Ok(None);
    }
    Ok(Some(GraphPair {
        source: body.source.into_graph()?,
        target: body.target.into_graph()?,
        skipped: body.skipped,
        gold: body.gold,
    }))
}
