//! Per-entity orchestration: attribute-aware voting, then relation-aware
//! voting, then the fallback policy.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidate_index::{CandidateSet, DEFAULT_K};
use crate::kg_store::{EntityId, GoldAlignment, KnowledgeGraph};
use crate::llm_gateway::Gateway;
use crate::prompt_forge::{PromptKind, PromptTemplate, MAX_OPTIONS};
use crate::triple_selector::{
    SelectorError, TripleSelector, DEFAULT_K_ATTRIBUTES, DEFAULT_K_RELATIONS,
};
use crate::vote_engine::{derive_seed, run_vote, VoteConfig, VoteEnv, VoteError, VoteOutcome};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("source {0} has no candidates")]
    NoCandidates(EntityId),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error("no source entity with a gold alignment to evaluate")]
    EmptyEval,
    #[error("cannot write report {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Emit the most similar candidate.
    TopSimilarity,
    /// Leave the source unresolved.
    None,
}

impl std::str::FromStr for FallbackPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top" | "top-similarity" | "top_similarity" => Ok(Self::TopSimilarity),
            "none" => Ok(Self::None),
            other => Err(format!(
                "unknown fallback policy '{other}' (expected top-similarity or none)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k_candidates: usize,
    pub k_attributes: usize,
    pub k_relations: usize,
    pub vote: VoteConfig,
    pub fallback: FallbackPolicy,
    /// Source entities aligned concurrently.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_candidates: DEFAULT_K,
            k_attributes: DEFAULT_K_ATTRIBUTES,
            k_relations: DEFAULT_K_RELATIONS,
            vote: VoteConfig::default(),
            fallback: FallbackPolicy::TopSimilarity,
            workers: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        let checks = [
            (self.k_candidates, "k_candidates"),
            (self.k_attributes, "k_attributes"),
            (self.k_relations, "k_relations"),
            (self.vote.rounds, "vote rounds"),
            (self.workers, "workers"),
        ];
        if let Some((_, name)) = checks.iter().find(|(v, _)| *v == 0) {
            return Err(AlignError::Config(format!("{name} must be at least 1")));
        }
        if self.k_candidates > MAX_OPTIONS {
            return Err(AlignError::Config(format!(
                "k_candidates {} exceeds the {MAX_OPTIONS} option labels",
                self.k_candidates
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AttributeStage,
    RelationStage,
    Fallback,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDecision {
    pub source: EntityId,
    pub predicted: Option<EntityId>,
    pub stage: Stage,
    /// Candidates in the order they were offered.
    pub candidates: Vec<EntityId>,
    /// Stages skipped because the prompt would have had nothing to show.
    pub skipped: Vec<PromptKind>,
    pub vote_outcomes: Vec<VoteOutcome>,
}

/// Shared inputs for aligning a batch.
#[derive(Clone, Copy)]
pub struct AlignContext<'a> {
    pub source_kg: &'a KnowledgeGraph,
    pub target_kg: &'a KnowledgeGraph,
    pub selector: &'a TripleSelector<'a>,
    pub template: &'a PromptTemplate,
    pub gateway: &'a Gateway,
    pub config: &'a PipelineConfig,
}

impl AlignContext<'_> {
    fn vote_env(&self) -> VoteEnv<'_> {
        VoteEnv {
            source_kg: self.source_kg,
            target_kg: self.target_kg,
            template: self.template,
            gateway: self.gateway,
        }
    }
}

pub fn align_entity(
    ctx: &AlignContext<'_>,
    set: &CandidateSet,
) -> Result<AlignmentDecision, AlignError> {
    let source = set.source;
    if set.is_empty() {
        return Err(AlignError::NoCandidates(source));
    }
    let candidates: Vec<EntityId> = set
        .targets()
        .into_iter()
        .take(ctx.config.k_candidates)
        .collect();
    let env = ctx.vote_env();
    let mut decision = AlignmentDecision {
        source,
        predicted: None,
        stage: Stage::Unresolved,
        candidates,
        skipped: Vec::new(),
        vote_outcomes: Vec::new(),
    };

    let stages = [
        (
            PromptKind::AttributeAware,
            ctx.config.k_attributes,
            Stage::AttributeStage,
        ),
        (
            PromptKind::RelationAware,
            ctx.config.k_relations,
            Stage::RelationStage,
        ),
    ];
    for (kind, k, stage) in stages {
        let triple_kind = kind.triple_kind().expect("stage kinds carry triples");
        let selections =
            ctx.selector
                .select_for_prompt(source, &decision.candidates, triple_kind, k)?;
        if selections.is_vacuous() {
            decision.skipped.push(kind);
            continue;
        }
        let config = ctx
            .config
            .vote
            .with_seed(derive_seed(ctx.config.vote.seed, source, kind));
        let outcome = run_vote(
            &env,
            source,
            &decision.candidates,
            kind,
            Some(&selections),
            &config,
        )?;
        let winner = outcome.decision.winner();
        decision.vote_outcomes.push(outcome);
        if let Some(w) = winner {
            decision.predicted = Some(w);
            decision.stage = stage;
            return Ok(decision);
        }
    }

    if ctx.config.fallback == FallbackPolicy::TopSimilarity {
        // the offered order may have been shuffled, so pick by score
        decision.predicted = set
            .candidates
            .iter()
            .take(ctx.config.k_candidates)
            .min_by(|a, b| b.score.total_cmp(&a.score).then(a.target.cmp(&b.target)))
            .map(|c| c.target);
        decision.stage = Stage::Fallback;
    }
    Ok(decision)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntityResult {
    Decided(AlignmentDecision),
    Aborted { source: EntityId, aborted: String },
}

impl EntityResult {
    pub fn source(&self) -> EntityId {
        match self {
            EntityResult::Decided(d) => d.source,
            EntityResult::Aborted { source, .. } => *source,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub by_stage: BTreeMap<Stage, usize>,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    /// One entry per input source, in input order.
    pub results: Vec<EntityResult>,
    pub counters: StageCounters,
}

impl BatchResult {
    pub fn decisions(&self) -> impl Iterator<Item = &AlignmentDecision> {
        self.results.iter().filter_map(|r| match r {
            EntityResult::Decided(d) => Some(d),
            EntityResult::Aborted { .. } => None,
        })
    }

    pub fn aborted(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.results.iter().filter_map(|r| match r {
            EntityResult::Aborted { source, .. } => Some(*source),
            EntityResult::Decided(_) => None,
        })
    }

    /// Hits@1 over every source, counting aborted ones as unresolved.
    pub fn hits_at_1(&self, gold: &GoldAlignment) -> Result<HitsReport, AlignError> {
        let predictions = self.results.iter().map(|r| match r {
            EntityResult::Decided(d) => (d.source, d.predicted),
            EntityResult::Aborted { source, .. } => (*source, None),
        });
        hits_from_predictions(predictions, gold)
    }
}

/// Align every source concurrently, `config.workers` at a time. A vote
/// that aborts on transport failures is recorded and the batch continues.
pub fn align_all(ctx: &AlignContext<'_>, sets: &[CandidateSet]) -> Result<BatchResult, AlignError> {
    ctx.config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.workers)
        .build()
        .map_err(|e| AlignError::Pool(e.to_string()))?;
    let done = AtomicUsize::new(0);
    let total = sets.len();
    let results = pool.install(|| {
        sets.par_iter()
            .map(|set| {
                let r = match align_entity(ctx, set) {
                    Ok(d) => Ok(EntityResult::Decided(d)),
                    Err(AlignError::Vote(e @ VoteError::RunAborted { .. })) => {
                        log::warn!("{e}");
                        Ok(EntityResult::Aborted {
                            source: set.source,
                            aborted: e.to_string(),
                        })
                    }
                    Err(e) => Err(e),
                };
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n.is_multiple_of(100) || n == total {
                    log::info!("aligned {n}/{total}");
                }
                r
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut counters = StageCounters::default();
    for r in &results {
        match r {
            EntityResult::Decided(d) => *counters.by_stage.entry(d.stage).or_default() += 1,
            EntityResult::Aborted { .. } => counters.aborted += 1,
        }
    }
    Ok(BatchResult { results, counters })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitsReport {
    /// Correct over all evaluated sources; unresolved counts as wrong.
    pub strict: f64,
    /// Correct over sources that received a prediction.
    pub answered_only: f64,
    pub correct: usize,
    pub answered: usize,
    pub evaluated: usize,
}

/// Hits@1 over decisions whose source has a gold alignment.
pub fn hits_at_1<'a>(
    decisions: impl IntoIterator<Item = &'a AlignmentDecision>,
    gold: &GoldAlignment,
) -> Result<HitsReport, AlignError> {
    hits_from_predictions(decisions.into_iter().map(|d| (d.source, d.predicted)), gold)
}

fn hits_from_predictions(
    predictions: impl Iterator<Item = (EntityId, Option<EntityId>)>,
    gold: &GoldAlignment,
) -> Result<HitsReport, AlignError> {
    let (mut correct, mut answered, mut evaluated) = (0, 0, 0);
    for (source, predicted) in predictions {
        let Some(g) = gold.get(&source) else { continue };
        evaluated += 1;
        if let Some(p) = predicted {
            answered += 1;
            if p == *g {
                correct += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(AlignError::EmptyEval);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(HitsReport {
        strict: ratio(correct, evaluated),
        answered_only: ratio(correct, answered),
        correct,
        answered,
        evaluated,
    })
}

/// JSONL report, one line per source in input order.
pub fn write_report(batch: &BatchResult, path: &Path) -> Result<(), AlignError> {
    let io_err = |source| AlignError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for r in &batch.results {
        let line = serde_json::to_string(r).map_err(|e| io_err(std::io::Error::other(e)))?;
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
