//! Multi-round permutation voting.
//!
//! The same multiple-choice question is asked under `n` distinct orderings
//! of the candidate list. Each answer is mapped back through its ordering to
//! a target entity, and a target wins if it is the unique most-voted one with
//! at least `n / 2` (integer division) votes.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg_store::{EntityId, KnowledgeGraph};
use crate::llm_gateway::{ChoiceOutcome, ChoiceResult, Gateway};
use crate::prompt_forge::{build_prompt, ForgeError, PromptKind, PromptTemplate};
use crate::triple_selector::PromptSelections;

pub const DEFAULT_ROUNDS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum VoteError {
    #[error("cannot vote over an empty candidate set")]
    EmptyCandidates,
    #[error("number of rounds must be at least 1")]
    ZeroRounds,
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error("vote for source {entity} aborted: {failed} of {rounds} rounds failed ({last_error})")]
    RunAborted {
        entity: EntityId,
        failed: usize,
        rounds: usize,
        last_error: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteConfig {
    pub rounds: usize,
    pub seed: u64,
    /// Keep the similarity order as the first round's ordering.
    pub identity_first: bool,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            seed: 0,
            identity_first: true,
        }
    }
}

impl VoteConfig {
    pub fn threshold(&self) -> usize {
        self.rounds / 2
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSample {
    pub permutations: Vec<Vec<usize>>,
    /// Fewer than the requested rounds exist (`n > m!`).
    pub capped: bool,
}

/// `m!` if it fits in a u64.
fn factorial(m: usize) -> Option<u64> {
    (1..=m as u64).try_fold(1u64, |acc, x| acc.checked_mul(x))
}

/// Advance `p` to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = p.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = p.iter().rposition(|&x| x > p[i]).expect("successor exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

fn all_permutations(m: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..m).collect();
    let mut out = vec![p.clone()];
    while next_permutation(&mut p) {
        out.push(p.clone());
    }
    out
}

/// `n` pairwise distinct permutations of `0..m`, deterministic under `seed`.
pub fn sample_permutations(
    m: usize,
    n: usize,
    seed: u64,
    identity_first: bool,
) -> Result<PermutationSample, VoteError> {
    if m == 0 {
        return Err(VoteError::EmptyCandidates);
    }
    if n == 0 {
        return Err(VoteError::ZeroRounds);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity: Vec<usize> = (0..m).collect();

    if let Some(total) = factorial(m).filter(|&t| t <= n as u64) {
        let mut perms = all_permutations(m);
        if !identity_first {
            perms.shuffle(&mut rng);
        }
        let capped = (total as usize) < n;
        if capped {
            log::warn!("{n} rounds requested but only {total} orderings of {m} candidates exist");
        }
        return Ok(PermutationSample {
            permutations: perms,
            capped,
        });
    }

    let mut seen = HashSet::with_capacity(n);
    let mut perms = Vec::with_capacity(n);
    if identity_first {
        seen.insert(identity.clone());
        perms.push(identity.clone());
    }
    while perms.len() < n {
        let mut p = identity.clone();
        p.shuffle(&mut rng);
        if seen.insert(p.clone()) {
            perms.push(p);
        }
    }
    Ok(PermutationSample {
        permutations: perms,
        capped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Winner(EntityId),
    NoConsensus,
}

impl Decision {
    pub fn winner(&self) -> Option<EntityId> {
        match self {
            Decision::Winner(w) => Some(*w),
            Decision::NoConsensus => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub counts: BTreeMap<EntityId, usize>,
    pub decision: Decision,
}

/// Count votes and apply the threshold rule. A tie at the maximum never
/// produces a winner.
pub fn tally(choices: &[EntityId], threshold: usize) -> Tally {
    let mut counts = BTreeMap::new();
    for &c in choices {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    let mut leaders = counts.iter().filter(|(_, &v)| v == max);
    let decision = match (leaders.next(), leaders.next()) {
        (Some((&w, _)), None) if max >= threshold => Decision::Winner(w),
        _ => Decision::NoConsensus,
    };
    Tally { counts, decision }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// `order[i] = candidates[permutation[i]]` is shown as option `i`.
    pub permutation: Vec<usize>,
    pub result: Option<ChoiceResult>,
    /// The chosen option mapped back to its target.
    pub choice: Option<EntityId>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub kind: PromptKind,
    pub seed: u64,
    pub rounds: usize,
    pub threshold: usize,
    pub capped: bool,
    pub per_round: Vec<RoundRecord>,
    pub tally: BTreeMap<EntityId, usize>,
    pub decision: Decision,
}

/// Shared, read-only inputs for a vote.
#[derive(Clone, Copy)]
pub struct VoteEnv<'a> {
    pub source_kg: &'a KnowledgeGraph,
    pub target_kg: &'a KnowledgeGraph,
    pub template: &'a PromptTemplate,
    pub gateway: &'a Gateway,
}

/// Ask one question per sampled ordering of `candidates` and tally the
/// answers. Rounds run concurrently; a round whose request fails counts as
/// an abstention unless more than half the rounds fail.
pub fn run_vote(
    env: &VoteEnv<'_>,
    source: EntityId,
    candidates: &[EntityId],
    kind: PromptKind,
    selections: Option<&PromptSelections>,
    config: &VoteConfig,
) -> Result<VoteOutcome, VoteError> {
    let sample = sample_permutations(
        candidates.len(),
        config.rounds,
        config.seed,
        config.identity_first,
    )?;

    let prompts = sample
        .permutations
        .iter()
        .map(|perm| {
            let order: Vec<EntityId> = perm.iter().map(|&i| candidates[i]).collect();
            build_prompt(
                kind,
                source,
                &order,
                env.source_kg,
                env.target_kg,
                selections,
                env.template,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let answers: Vec<_> = prompts
        .par_iter()
        .enumerate()
        .map(|(round, prompt)| env.gateway.ask(prompt, round))
        .collect();

    let mut per_round = Vec::with_capacity(answers.len());
    let mut votes = Vec::new();
    let mut failed = 0;
    let mut last_error = String::new();
    for ((perm, prompt), answer) in sample.permutations.into_iter().zip(&prompts).zip(answers) {
        let record = match answer {
            Ok(result) => {
                let choice = match result.outcome {
                    ChoiceOutcome::Chosen(i) => prompt.options.get(i).map(|o| o.target),
                    ChoiceOutcome::Abstain(_) => None,
                };
                votes.extend(choice);
                RoundRecord {
                    permutation: perm,
                    result: Some(result),
                    choice,
                    error: None,
                }
            }
            Err(e) => {
                failed += 1;
                last_error = e.to_string();
                RoundRecord {
                    permutation: perm,
                    result: None,
                    choice: None,
                    error: Some(last_error.clone()),
                }
            }
        };
        per_round.push(record);
    }

    if failed * 2 > per_round.len() {
        return Err(VoteError::RunAborted {
            entity: source,
            failed,
            rounds: per_round.len(),
            last_error,
        });
    }

    let Tally { counts, decision } = tally(&votes, config.threshold());
    Ok(VoteOutcome {
        kind,
        seed: config.seed,
        rounds: config.rounds,
        threshold: config.threshold(),
        capped: sample.capped,
        per_round,
        tally: counts,
        decision,
    })
}

/// Per-entity, per-stage seed derived from a run seed.
pub fn derive_seed(base: u64, source: EntityId, kind: PromptKind) -> u64 {
    let stage = match kind {
        PromptKind::KnowledgeDriven => 1,
        PromptKind::AttributeAware => 2,
        PromptKind::RelationAware => 3,
    };
    splitmix64(splitmix64(base ^ u64::from(source.0)) ^ stage)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[u32]) -> Vec<EntityId> {
        xs.iter().map(|&x| EntityId(x)).collect()
    }

    #[test]
    fn three_candidates_six_rounds_gives_all_orderings() {
        let s = sample_permutations(3, 6, 1, true).unwrap();
        assert!(!s.capped);
        assert_eq!(s.permutations.len(), 6);
        assert_eq!(s.permutations[0], vec![0, 1, 2]);
        let distinct: HashSet<_> = s.permutations.iter().collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn single_candidate() {
        let s = sample_permutations(1, 1, 0, true).unwrap();
        assert_eq!(s.permutations, vec![vec![0]]);
        assert!(!s.capped);
    }

    #[test]
    fn two_candidates_five_rounds_is_capped() {
        let s = sample_permutations(2, 5, 0, true).unwrap();
        assert_eq!(s.permutations.len(), 2);
        assert!(s.capped);
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_permutations(10, 5, 42, false).unwrap();
        let b = sample_permutations(10, 5, 42, false).unwrap();
        let c = sample_permutations(10, 5, 43, false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn lexicographic_successor() {
        let mut p = vec![0, 2, 1];
        assert!(next_permutation(&mut p));
        assert_eq!(p, vec![1, 0, 2]);
        let mut last = vec![2, 1, 0];
        assert!(!next_permutation(&mut last));
    }

    #[test]
    fn tally_hand_examples() {
        let t = tally(&ids(&[2, 2, 7, 2, 9]), 2);
        assert_eq!(t.decision, Decision::Winner(EntityId(2)));
        assert_eq!(t.counts[&EntityId(2)], 3);
        assert_eq!(
            tally(&ids(&[1, 2, 3, 4, 5]), 2).decision,
            Decision::NoConsensus
        );
        assert_eq!(
            tally(&ids(&[1, 1, 2, 2]), 2).decision,
            Decision::NoConsensus
        );
        assert_eq!(tally(&[], 0).decision, Decision::NoConsensus);
    }

    #[test]
    fn seeds_differ_by_stage_and_source() {
        let a = derive_seed(7, EntityId(1), PromptKind::AttributeAware);
        assert_ne!(a, derive_seed(7, EntityId(1), PromptKind::RelationAware));
        assert_ne!(a, derive_seed(7, EntityId(2), PromptKind::AttributeAware));
        assert_eq!(a, derive_seed(7, EntityId(1), PromptKind::AttributeAware));
    }
}
