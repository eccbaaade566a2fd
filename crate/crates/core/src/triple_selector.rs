//! Identifiability scoring of attributes and relations.
//!
//! For a source entity `e` with candidate set `C`:
//!
//! * function degree of a subject `s` (attribute or relation), over the
//!   triples of *both* graphs: `|distinct heads using s| / |distinct (head, object) pairs using s|`;
//! * frequency of `s` in `C`: the fraction of candidates that have at least one
//!   triple with `s` (outgoing triples only for relations);
//! * identifiability: function degree times frequency.
//!
//! All three are exact rationals. A subject is identified across the two
//! graphs by its uri, and heads are told apart by the side they belong to.
//! Function degrees are computed once when the selector is built; frequencies
//! depend on the candidate set and are computed per call.

use std::collections::{HashMap, HashSet};
use std::io::{self, Write};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg_store::{AttributeTriple, EntityId, KnowledgeGraph, RelationalTriple, Side};

pub type Score = Ratio<u64>;

pub const DEFAULT_K_ATTRIBUTES: usize = 5;
pub const DEFAULT_K_RELATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleKind {
    Attribute,
    Relation,
}

impl TripleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TripleKind::Attribute => "attribute",
            TripleKind::Relation => "relation",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectorError {
    #[error("attribute {0} does not occur in either graph")]
    AttributeUnknown(String),
    #[error("relation {0} does not occur in either graph")]
    RelationUnknown(String),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("entity {0} is not part of the {1:?} graph")]
    UnknownEntity(EntityId, Side),
}

/// Score of one attribute or relation for one candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentifiabilityScore {
    /// Attribute or relation id, local to the graph of the scored entity.
    pub subject: u32,
    pub function_degree: Score,
    pub frequency: Score,
    pub identifiability: Score,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectedTriple {
    Attribute(AttributeTriple),
    Relation(RelationalTriple),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredTriple {
    pub score: IdentifiabilityScore,
    /// Position of the triple in its graph's triple list.
    pub position: usize,
    pub triple: SelectedTriple,
}

/// The triples of the top-k most identifying subjects of one entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedTriples {
    pub entity: EntityId,
    pub side: Side,
    pub kind: TripleKind,
    pub triples: Vec<ScoredTriple>,
}

impl SelectedTriples {
    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Distinct subjects in selection order.
    pub fn subjects(&self) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for t in &self.triples {
            if out.last() != Some(&t.score.subject) {
                out.push(t.score.subject);
            }
        }
        out
    }
}

/// Per-candidate-set counts of how many candidates hold each subject.
#[derive(Debug, Clone)]
pub struct CandidateProfile<'g> {
    size: u64,
    attribute_holders: HashMap<&'g str, u64>,
    relation_holders: HashMap<&'g str, u64>,
}

impl CandidateProfile<'_> {
    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

/// Function-degree cache over a source/target graph pair.
pub struct TripleSelector<'g> {
    source: &'g KnowledgeGraph,
    target: &'g KnowledgeGraph,
    att_fun: HashMap<&'g str, Score>,
    rel_fun: HashMap<&'g str, Score>,
}

fn function_degrees<'g, O: Ord + Copy>(
    entries: impl Iterator<Item = (&'g str, Side, EntityId, O)>,
) -> HashMap<&'g str, Score> {
    let mut grouped: HashMap<&'g str, Vec<(Side, EntityId, O)>> = HashMap::new();
    for (subject, side, head, object) in entries {
        grouped
            .entry(subject)
            .or_default()
            .push((side, head, object));
    }
    grouped
        .into_iter()
        .map(|(subject, mut rows)| {
            rows.sort_unstable();
            rows.dedup();
            let pairs = rows.len() as u64;
            let mut heads = 0u64;
            let mut last = None;
            for &(side, head, _) in &rows {
                if last != Some((side, head)) {
                    heads += 1;
                    last = Some((side, head));
                }
            }
            (subject, Ratio::new(heads, pairs))
        })
        .collect()
}

impl<'g> TripleSelector<'g> {
    pub fn new(source: &'g KnowledgeGraph, target: &'g KnowledgeGraph) -> Self {
        let sides = [(Side::Source, source), (Side::Target, target)];
        let att_fun = function_degrees(sides.iter().flat_map(|&(side, g)| {
            g.att_triples().iter().map(move |t| {
                (
                    g.attribute_uri(t.attribute).expect("validated graph"),
                    side,
                    t.head,
                    t.value.as_str(),
                )
            })
        }));
        let rel_fun = function_degrees(sides.iter().flat_map(|&(side, g)| {
            g.rel_triples().iter().map(move |t| {
                (
                    g.relation_uri(t.relation).expect("validated graph"),
                    side,
                    t.head,
                    t.tail,
                )
            })
        }));
        Self {
            source,
            target,
            att_fun,
            rel_fun,
        }
    }

    pub fn source(&self) -> &'g KnowledgeGraph {
        self.source
    }

    pub fn target(&self) -> &'g KnowledgeGraph {
        self.target
    }

    fn graph(&self, side: Side) -> &'g KnowledgeGraph {
        match side {
            Side::Source => self.source,
            Side::Target => self.target,
        }
    }

    pub fn function_degree_att(&self, attribute_uri: &str) -> Result<Score, SelectorError> {
        self.att_fun
            .get(attribute_uri)
            .copied()
            .ok_or_else(|| SelectorError::AttributeUnknown(attribute_uri.to_string()))
    }

    pub fn function_degree_rel(&self, relation_uri: &str) -> Result<Score, SelectorError> {
        self.rel_fun
            .get(relation_uri)
            .copied()
            .ok_or_else(|| SelectorError::RelationUnknown(relation_uri.to_string()))
    }

    /// Count, for every subject, how many of `candidates` hold it.
    pub fn profile(&self, candidates: &[EntityId]) -> Result<CandidateProfile<'g>, SelectorError> {
        if candidates.is_empty() {
            return Err(SelectorError::EmptyCandidates);
        }
        let t = self.target;
        let mut attribute_holders: HashMap<&'g str, u64> = HashMap::new();
        let mut relation_holders: HashMap<&'g str, u64> = HashMap::new();
        let distinct: HashSet<EntityId> = candidates.iter().copied().collect();
        for &c in &distinct {
            let attrs: HashSet<&'g str> = t
                .attribute_triples_of(c)
                .map(|(_, tr)| t.attribute_uri(tr.attribute).expect("validated graph"))
                .collect();
            for a in attrs {
                *attribute_holders.entry(a).or_default() += 1;
            }
            let rels: HashSet<&'g str> = t
                .outgoing_of(c)
                .map(|(_, tr)| t.relation_uri(tr.relation).expect("validated graph"))
                .collect();
            for r in rels {
                *relation_holders.entry(r).or_default() += 1;
            }
        }
        Ok(CandidateProfile {
            size: candidates.len() as u64,
            attribute_holders,
            relation_holders,
        })
    }

    pub fn frequency_att(
        &self,
        attribute_uri: &str,
        candidates: &[EntityId],
    ) -> Result<Score, SelectorError> {
        let p = self.profile(candidates)?;
        Ok(Self::freq(&p.attribute_holders, p.size, attribute_uri))
    }

    pub fn frequency_rel(
        &self,
        relation_uri: &str,
        candidates: &[EntityId],
    ) -> Result<Score, SelectorError> {
        let p = self.profile(candidates)?;
        Ok(Self::freq(&p.relation_holders, p.size, relation_uri))
    }

    fn freq(holders: &HashMap<&str, u64>, size: u64, subject: &str) -> Score {
        Ratio::new(holders.get(subject).copied().unwrap_or(0), size)
    }

    /// Zero for an attribute absent from both graphs.
    pub fn identifiability_att(
        &self,
        attribute_uri: &str,
        candidates: &[EntityId],
    ) -> Result<Score, SelectorError> {
        let freq = self.frequency_att(attribute_uri, candidates)?;
        let fun = self
            .att_fun
            .get(attribute_uri)
            .copied()
            .unwrap_or_else(zero);
        Ok(fun * freq)
    }

    /// Zero for a relation absent from both graphs.
    pub fn identifiability_rel(
        &self,
        relation_uri: &str,
        candidates: &[EntityId],
    ) -> Result<Score, SelectorError> {
        let freq = self.frequency_rel(relation_uri, candidates)?;
        let fun = self.rel_fun.get(relation_uri).copied().unwrap_or_else(zero);
        Ok(fun * freq)
    }

    fn score_subject(
        &self,
        profile: &CandidateProfile<'_>,
        kind: TripleKind,
        subject: u32,
        uri: &str,
    ) -> IdentifiabilityScore {
        let (fun_table, holders) = match kind {
            TripleKind::Attribute => (&self.att_fun, &profile.attribute_holders),
            TripleKind::Relation => (&self.rel_fun, &profile.relation_holders),
        };
        let function_degree = fun_table.get(uri).copied().unwrap_or_else(zero);
        let frequency = Self::freq(holders, profile.size, uri);
        IdentifiabilityScore {
            subject,
            function_degree,
            frequency,
            identifiability: function_degree * frequency,
        }
    }

    /// Select the triples of the `k` highest-scoring subjects of `entity`.
    ///
    /// An entity with several triples for a chosen subject keeps all of them;
    /// the subject counts once toward `k`. Order: identifiability descending,
    /// then subject id, then triple position.
    pub fn select_top_triples(
        &self,
        entity: EntityId,
        side: Side,
        candidates: &[EntityId],
        kind: TripleKind,
        k: usize,
    ) -> Result<SelectedTriples, SelectorError> {
        let profile = self.profile(candidates)?;
        self.select_with_profile(entity, side, &profile, kind, k)
    }

    pub fn select_with_profile(
        &self,
        entity: EntityId,
        side: Side,
        profile: &CandidateProfile<'_>,
        kind: TripleKind,
        k: usize,
    ) -> Result<SelectedTriples, SelectorError> {
        if k == 0 {
            return Err(SelectorError::InvalidK);
        }
        let g = self.graph(side);
        if !g.contains(entity) {
            return Err(SelectorError::UnknownEntity(entity, side));
        }

        let mut triples: Vec<(u32, usize, SelectedTriple)> = match kind {
            TripleKind::Attribute => g
                .attribute_triples_of(entity)
                .map(|(pos, t)| (t.attribute.0, pos, SelectedTriple::Attribute(t.clone())))
                .collect(),
            TripleKind::Relation => g
                .outgoing_of(entity)
                .map(|(pos, t)| (t.relation.0, pos, SelectedTriple::Relation(*t)))
                .collect(),
        };

        let mut scores: HashMap<u32, IdentifiabilityScore> = HashMap::new();
        for &(subject, _, _) in &triples {
            scores.entry(subject).or_insert_with(|| {
                let uri = match kind {
                    TripleKind::Attribute => g.attribute_uri(subject.into()),
                    TripleKind::Relation => g.relation_uri(subject.into()),
                }
                .expect("validated graph");
                self.score_subject(profile, kind, subject, uri)
            });
        }
        let mut ranked: Vec<IdentifiabilityScore> = scores.values().copied().collect();
        ranked.sort_by(|a, b| {
            b.identifiability
                .cmp(&a.identifiability)
                .then(a.subject.cmp(&b.subject))
        });
        ranked.truncate(k);
        let rank_of: HashMap<u32, usize> = ranked
            .iter()
            .enumerate()
            .map(|(i, s)| (s.subject, i))
            .collect();

        triples.retain(|(subject, _, _)| rank_of.contains_key(subject));
        triples.sort_by_key(|&(subject, pos, _)| (rank_of[&subject], pos));
        Ok(SelectedTriples {
            entity,
            side,
            kind,
            triples: triples
                .into_iter()
                .map(|(subject, position, triple)| ScoredTriple {
                    score: scores[&subject],
                    position,
                    triple,
                })
                .collect(),
        })
    }

    /// Selections for the source entity and every candidate.
    pub fn select_for_prompt(
        &self,
        source: EntityId,
        candidates: &[EntityId],
        kind: TripleKind,
        k: usize,
    ) -> Result<PromptSelections, SelectorError> {
        let profile = self.profile(candidates)?;
        let source_sel = self.select_with_profile(source, Side::Source, &profile, kind, k)?;
        let mut per_candidate = HashMap::with_capacity(candidates.len());
        for &c in candidates {
            let sel = self.select_with_profile(c, Side::Target, &profile, kind, k)?;
            per_candidate.insert(c, sel);
        }
        Ok(PromptSelections {
            kind,
            source: source_sel,
            candidates: per_candidate,
        })
    }

    /// Debug dump: `entity_id TAB kind TAB subject_uri TAB fun TAB freq TAB identy`,
    /// one line per selected subject, scores as reduced fractions.
    pub fn write_debug_dump<W: Write>(
        &self,
        mut w: W,
        selections: &[&SelectedTriples],
    ) -> io::Result<()> {
        for sel in selections {
            let g = self.graph(sel.side);
            let mut last = None;
            for t in &sel.triples {
                if last == Some(t.score.subject) {
                    continue;
                }
                last = Some(t.score.subject);
                let uri = match sel.kind {
                    TripleKind::Attribute => g.attribute_uri(t.score.subject.into()),
                    TripleKind::Relation => g.relation_uri(t.score.subject.into()),
                }
                .unwrap_or("");
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    sel.entity,
                    sel.kind.as_str(),
                    uri,
                    t.score.function_degree,
                    t.score.frequency,
                    t.score.identifiability
                )?;
            }
        }
        Ok(())
    }
}

fn zero() -> Score {
    Ratio::from_integer(0)
}

/// Selections for every entity shown in one prompt.
#[derive(Debug, Clone)]
pub struct PromptSelections {
    pub kind: TripleKind,
    pub source: SelectedTriples,
    pub candidates: HashMap<EntityId, SelectedTriples>,
}

impl PromptSelections {
    /// True when the source or every candidate has nothing to show.
    pub fn is_vacuous(&self) -> bool {
        self.source.is_empty() || self.candidates.values().all(SelectedTriples::is_empty)
    }
}
