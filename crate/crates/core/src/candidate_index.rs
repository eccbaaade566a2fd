//! Candidate retrieval from externally trained entity embeddings.
//!
//! For every source entity the `k` target entities with the highest cosine
//! similarity form its candidate set. Ordering is total: score descending,
//! then target id ascending, so equal inputs always yield equal candidate
//! lists. Scores are kept for ordering and reporting only.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg_store::{EntityId, GoldAlignment};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error)]
pub enum IndexError {
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
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at line {line}: {value}")]
    Value { line: usize, value: String },
    #[error("no vector or scores for entity {0}")]
    UnknownEntity(EntityId),
    #[error("k = {k} exceeds the {available} available targets")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("nothing to evaluate")]
    EmptyEval,
}

/// Dense row-major vectors keyed by entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<EntityId>,
    data: Vec<f32>,
    norms: Vec<f64>,
    rows: HashMap<EntityId, usize>,
}

impl EmbeddingMatrix {
    pub fn from_rows(
        dim: usize,
        rows: impl IntoIterator<Item = (EntityId, Vec<f32>)>,
    ) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::Shape("dimension must be positive".into()));
        }
        let mut m = Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
            rows: HashMap::new(),
        };
        for (id, v) in rows {
            if v.len() != dim {
                return Err(IndexError::Shape(format!(
                    "entity {id}: {} components, expected {dim}",
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(IndexError::Value {
                    line: 0,
                    value: bad.to_string(),
                });
            }
            m.push(id, &v)?;
        }
        Ok(m)
    }

    fn push(&mut self, id: EntityId, v: &[f32]) -> Result<(), IndexError> {
        if self.rows.insert(id, self.ids.len()).is_some() {
            return Err(IndexError::Shape(format!("entity {id} has two vectors")));
        }
        self.ids.push(id);
        self.norms.push(norm(v));
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn vector(&self, id: EntityId) -> Option<&[f32]> {
        self.rows
            .get(&id)
            .map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }

    /// Keep only rows whose id passes `keep`, preserving row order.
    pub fn restricted_to(&self, keep: impl Fn(EntityId) -> bool) -> Self {
        let rows = self
            .ids
            .iter()
            .filter(|&&id| keep(id))
            .map(|&id| (id, self.vector(id).expect("own id").to_vec()));
        Self::from_rows(self.dim, rows).expect("rows of a valid matrix")
    }

    pub fn write(&self, path: &Path) -> Result<(), IndexError> {
        let io = |e| IndexError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "{} {}", self.len(), self.dim).map_err(io)?;
        for &id in &self.ids {
            write!(w, "{id}").map_err(io)?;
            for x in self.vector(id).expect("own id") {
                write!(w, " {x}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity with f64 accumulation. A zero vector scores 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    cosine_with_norms(a, norm(a), b, norm(b))
}

fn cosine_with_norms(a: &[f32], na: f64, b: &[f32], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    dot / (na * nb)
}

/// Read `count dim` followed by `id v1 .. v_dim` rows.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, IndexError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IndexError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    read_embeddings(BufReader::new(file), path)
}

pub fn read_embeddings<R: BufRead>(reader: R, path: &Path) -> Result<EmbeddingMatrix, IndexError> {
    let parse_err = |line: usize, message: String| IndexError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let (count, dim) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_err(1, "missing `count dim` header".into()));
        };
        let line = line.map_err(|e| IndexError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || {
            it.next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| parse_err(i + 1, format!("bad header {line:?}")))
        };
        break (next()?, next()?);
    };
    if dim == 0 {
        return Err(IndexError::Shape("dimension must be positive".into()));
    }

    let mut m = EmbeddingMatrix {
        dim,
        ids: Vec::with_capacity(count),
        data: Vec::with_capacity(count * dim),
        norms: Vec::with_capacity(count),
        rows: HashMap::with_capacity(count),
    };
    let mut row = Vec::with_capacity(dim);
    for (i, line) in lines {
        let n = i + 1;
        let line = line.map_err(|e| IndexError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let id = id
            .parse::<u32>()
            .map_err(|_| parse_err(n, format!("bad entity id {id:?}")))?;
        row.clear();
        for f in fields {
            let x: f64 = f
                .parse()
                .map_err(|_| parse_err(n, format!("bad component {f:?}")))?;
            let x32 = x as f32;
            if !x.is_finite() || !x32.is_finite() {
                return Err(IndexError::Value {
                    line: n,
                    value: f.to_string(),
                });
            }
            row.push(x32);
        }
        if row.len() != dim {
            return Err(IndexError::Shape(format!(
                "line {n}: {} components, expected {dim}",
                row.len()
            )));
        }
        m.push(EntityId(id), &row)?;
    }
    if m.len() != count {
        return Err(IndexError::Shape(format!(
            "header announces {count} vectors, found {}",
            m.len()
        )));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub target: EntityId,
    pub score: f64,
}

/// Top-k targets for one source entity, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub source: EntityId,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn targets(&self) -> Vec<EntityId> {
        self.candidates.iter().map(|c| c.target).collect()
    }

    pub fn contains(&self, target: EntityId) -> bool {
        self.candidates.iter().any(|c| c.target == target)
    }

    /// Same set truncated to its first `k` candidates.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            source: self.source,
            candidates: self.candidates.iter().take(k).copied().collect(),
        }
    }
}

/// Anything that can score every target for a source entity.
pub trait SimilarityProvider: Sync {
    /// All `(target, score)` pairs for `source`, without duplicates.
    fn scores(&self, source: EntityId) -> Result<Vec<(EntityId, f64)>, IndexError>;
}

/// Cosine similarity between a source and a target embedding matrix.
pub struct CosineProvider<'a> {
    pub source: &'a EmbeddingMatrix,
    pub target: &'a EmbeddingMatrix,
}

impl SimilarityProvider for CosineProvider<'_> {
    fn scores(&self, source: EntityId) -> Result<Vec<(EntityId, f64)>, IndexError> {
        let row = *self
            .source
            .rows
            .get(&source)
            .ok_or(IndexError::UnknownEntity(source))?;
        if self.source.dim != self.target.dim {
            return Err(IndexError::Shape(format!(
                "source dim {} != target dim {}",
                self.source.dim, self.target.dim
            )));
        }
        let dim = self.source.dim;
        let v = &self.source.data[row * dim..(row + 1) * dim];
        let nv = self.source.norms[row];
        Ok(self
            .target
            .ids
            .iter()
            .enumerate()
            .map(|(r, &id)| {
                let t = &self.target.data[r * dim..(r + 1) * dim];
                (id, cosine_with_norms(v, nv, t, self.target.norms[r]))
            })
            .collect())
    }
}

/// Scores read from a `source TAB target TAB score` file.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedScores {
    by_source: HashMap<EntityId, Vec<(EntityId, f64)>>,
}

impl PrecomputedScores {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| IndexError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::read(BufReader::new(file), path)
    }

    pub fn read<R: BufRead>(reader: R, path: &Path) -> Result<Self, IndexError> {
        let mut seen: BTreeMap<(EntityId, EntityId), ()> = BTreeMap::new();
        let mut out = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| IndexError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || IndexError::Parse {
                path: path.to_path_buf(),
                line: n,
                message: format!("expected `source<TAB>target<TAB>score`, got {line:?}"),
            };
            if f.len() != 3 {
                return Err(bad());
            }
            let s = EntityId(f[0].trim().parse().map_err(|_| bad())?);
            let t = EntityId(f[1].trim().parse().map_err(|_| bad())?);
            let score: f64 = f[2].trim().parse().map_err(|_| bad())?;
            if !score.is_finite() {
                return Err(IndexError::Value {
                    line: n,
                    value: f[2].to_string(),
                });
            }
            if seen.insert((s, t), ()).is_some() {
                return Err(IndexError::Shape(format!(
                    "line {n}: duplicate pair ({s}, {t})"
                )));
            }
            out.by_source.entry(s).or_default().push((t, score));
        }
        Ok(out)
    }
}

impl SimilarityProvider for PrecomputedScores {
    fn scores(&self, source: EntityId) -> Result<Vec<(EntityId, f64)>, IndexError> {
        self.by_source
            .get(&source)
            .cloned()
            .ok_or(IndexError::UnknownEntity(source))
    }
}

fn rank_order(a: &(EntityId, f64), b: &(EntityId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-k candidates through any similarity provider.
pub fn top_k_with(
    provider: &dyn SimilarityProvider,
    source: EntityId,
    k: usize,
) -> Result<CandidateSet, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    let mut scores = provider.scores(source)?;
    if k > scores.len() {
        return Err(IndexError::KTooLarge {
            k,
            available: scores.len(),
        });
    }
    if k < scores.len() {
        scores.select_nth_unstable_by(k - 1, rank_order);
        scores.truncate(k);
    }
    scores.sort_unstable_by(rank_order);
    Ok(CandidateSet {
        source,
        candidates: scores
            .into_iter()
            .map(|(target, score)| Candidate { target, score })
            .collect(),
    })
}

/// Top-k targets of `source` by cosine similarity.
pub fn top_k(
    source: EntityId,
    k: usize,
    source_matrix: &EmbeddingMatrix,
    target_matrix: &EmbeddingMatrix,
) -> Result<CandidateSet, IndexError> {
    top_k_with(
        &CosineProvider {
            source: source_matrix,
            target: target_matrix,
        },
        source,
        k,
    )
}

/// Candidate sets for many sources in parallel; output follows input order.
pub fn top_k_batch(
    provider: &dyn SimilarityProvider,
    sources: &[EntityId],
    k: usize,
) -> Result<Vec<CandidateSet>, IndexError> {
    sources
        .par_iter()
        .map(|&s| top_k_with(provider, s, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub recall: f64,
    pub hits: usize,
    pub evaluated: usize,
    /// Sources without a gold target.
    pub skipped: Vec<EntityId>,
}

/// Fraction of sources whose gold target is among their candidates.
pub fn recall_at_k(
    sets: &[CandidateSet],
    gold: &GoldAlignment,
) -> Result<RecallReport, IndexError> {
    let mut hits = 0;
    let mut evaluated = 0;
    let mut skipped = Vec::new();
    for set in sets {
        match gold.get(&set.source) {
            Some(&t) => {
                evaluated += 1;
                if set.contains(t) {
                    hits += 1;
                }
            }
            None => skipped.push(set.source),
        }
    }
    if evaluated == 0 {
        return Err(IndexError::EmptyEval);
    }
    Ok(RecallReport {
        recall: hits as f64 / evaluated as f64,
        hits,
        evaluated,
        skipped,
    })
}

/// Write candidate sets as `source TAB rank TAB target TAB score`, one line
/// per candidate, rank starting at 1.
pub fn write_candidates(sets: &[CandidateSet], path: &Path) -> Result<(), IndexError> {
    let io = |e| IndexError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for set in sets {
        for (rank, c) in set.candidates.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{}", set.source, rank + 1, c.target, c.score).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn m(rows: &[(u32, &[f32])]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            rows[0].1.len(),
            rows.iter().map(|(id, v)| (EntityId(*id), v.to_vec())),
        )
        .unwrap()
    }

    #[test]
    fn load_header_and_rows() {
        let mat =
            read_embeddings(Cursor::new("2 3\n0 1 0 0\n1 0 1 0.5\n"), Path::new("e")).unwrap();
        assert_eq!(mat.dim(), 3);
        assert_eq!(mat.len(), 2);
        assert_eq!(mat.vector(EntityId(1)).unwrap(), &[0.0, 1.0, 0.5]);
    }

    #[test]
    fn short_row_is_shape_error() {
        let err = read_embeddings(Cursor::new("1 3\n0 1 0\n"), Path::new("e")).unwrap_err();
        assert!(matches!(err, IndexError::Shape(_)));
    }

    #[test]
    fn infinite_value_is_value_error() {
        let err = read_embeddings(Cursor::new("1 2\n0 inf 0\n"), Path::new("e")).unwrap_err();
        assert!(matches!(err, IndexError::Value { line: 2, .. }));
        let err = read_embeddings(Cursor::new("1 2\n0 NaN 0\n"), Path::new("e")).unwrap_err();
        assert!(matches!(err, IndexError::Value { .. }));
    }

    #[test]
    fn identical_vector_ranks_first() {
        let s = m(&[(0, &[1.0, 0.0])]);
        let t = m(&[(1, &[1.0, 0.0]), (2, &[0.0, 1.0])]);
        let c1 = top_k(EntityId(0), 1, &s, &t).unwrap();
        assert_eq!(
            c1.candidates,
            vec![Candidate {
                target: EntityId(1),
                score: 1.0
            }]
        );
        let c2 = top_k(EntityId(0), 2, &s, &t).unwrap();
        assert_eq!(
            c2.candidates,
            vec![
                Candidate {
                    target: EntityId(1),
                    score: 1.0
                },
                Candidate {
                    target: EntityId(2),
                    score: 0.0
                }
            ]
        );
    }

    #[test]
    fn ties_break_by_ascending_target_id() {
        let s = m(&[(0, &[1.0, 1.0])]);
        let t = m(&[(9, &[1.0, 0.0]), (4, &[0.0, 1.0]), (7, &[2.0, 0.0])]);
        let c = top_k(EntityId(0), 3, &s, &t).unwrap();
        assert_eq!(c.targets(), vec![EntityId(4), EntityId(7), EntityId(9)]);
    }

    #[test]
    fn errors() {
        let s = m(&[(0, &[1.0, 0.0])]);
        let t = m(&[(1, &[1.0, 0.0])]);
        assert!(matches!(
            top_k(EntityId(3), 1, &s, &t),
            Err(IndexError::UnknownEntity(EntityId(3)))
        ));
        assert!(matches!(
            top_k(EntityId(0), 2, &s, &t),
            Err(IndexError::KTooLarge { k: 2, available: 1 })
        ));
        assert!(matches!(
            top_k(EntityId(0), 0, &s, &t),
            Err(IndexError::ZeroK)
        ));
    }

    fn set(source: u32, targets: &[u32]) -> CandidateSet {
        CandidateSet {
            source: EntityId(source),
            candidates: targets
                .iter()
                .map(|&t| Candidate {
                    target: EntityId(t),
                    score: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn recall_counts() {
        let gold: GoldAlignment = (0..4).map(|i| (EntityId(i), EntityId(100 + i))).collect();
        let all: Vec<_> = (0..4).map(|i| set(i, &[100 + i, 7])).collect();
        assert_eq!(recall_at_k(&all, &gold).unwrap().recall, 1.0);
        let mut three = all.clone();
        three[2] = set(2, &[7, 8]);
        assert_eq!(recall_at_k(&three, &gold).unwrap().recall, 0.75);
        assert!(matches!(
            recall_at_k(&[], &gold),
            Err(IndexError::EmptyEval)
        ));
        let r = recall_at_k(&[set(0, &[100]), set(9, &[1])], &gold).unwrap();
        assert_eq!(r.skipped, vec![EntityId(9)]);
        assert_eq!(r.evaluated, 1);
    }

    #[test]
    fn precomputed_scores_follow_same_contract() {
        let p = PrecomputedScores::read(
            Cursor::new("0\t5\t0.2\n0\t6\t0.9\n0\t7\t0.9\n1\t5\t1\n"),
            Path::new("s"),
        )
        .unwrap();
        let c = top_k_with(&p, EntityId(0), 2).unwrap();
        assert_eq!(c.targets(), vec![EntityId(6), EntityId(7)]);
        assert!(matches!(
            top_k_with(&p, EntityId(1), 2),
            Err(IndexError::KTooLarge { .. })
        ));
    }
}
