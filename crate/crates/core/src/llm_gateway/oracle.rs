//! Scripted stand-ins for a model endpoint.
//!
//! Every oracle is a pure function of its script and the request, so runs
//! against an oracle are reproducible bit for bit.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{CompletionBackend, CompletionRequest, GatewayError};
use crate::kg_store::{EntityId, GoldAlignment};
use crate::prompt_forge::{option_label_for, PromptKind};

/// What a truthful oracle says when the gold target is not among the options.
pub const NO_MATCH_ANSWER: &str = "None of the listed candidates matches.";

#[derive(Debug, Clone, PartialEq)]
pub enum OracleScript {
    /// Answers the label of the gold target; abstains if it is not offered.
    Truthful(GoldAlignment),
    /// Always answers `A`.
    FirstOption,
    /// Answers the same text every time.
    FixedAnswer(String),
    /// Samples an option with probability proportional to its position
    /// weight, multiplied by `gold_weight` for the gold option. Positions
    /// past the end of `weights` reuse its last entry (1.0 if empty).
    PositionBiased {
        weights: Vec<f64>,
        gold_weight: f64,
        gold: GoldAlignment,
        seed: u64,
    },
    /// A different script per prompt kind.
    ByKind {
        knowledge: Box<OracleScript>,
        attribute: Box<OracleScript>,
        relation: Box<OracleScript>,
    },
    /// Transport failure for the listed sources, `inner` for the rest.
    FailFor {
        sources: BTreeSet<EntityId>,
        inner: Box<OracleScript>,
    },
}

impl OracleScript {
    pub fn answer(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let ctx = &request.context;
        match self {
            OracleScript::Truthful(gold) => {
                let hit = gold
                    .get(&ctx.source)
                    .and_then(|g| ctx.options.iter().position(|o| o == g));
                Ok(match hit {
                    Some(i) => label(i),
                    None => NO_MATCH_ANSWER.to_string(),
                })
            }
            OracleScript::FirstOption => Ok("A".to_string()),
            OracleScript::FixedAnswer(text) => Ok(text.clone()),
            OracleScript::PositionBiased {
                weights,
                gold_weight,
                gold,
                seed,
            } => {
                if ctx.options.is_empty() {
                    return Ok(NO_MATCH_ANSWER.to_string());
                }
                let gold_target = gold.get(&ctx.source);
                let w: Vec<f64> = (0..ctx.options.len())
                    .map(|i| {
                        let base = weights.get(i).or(weights.last()).copied().unwrap_or(1.0);
                        if Some(&ctx.options[i]) == gold_target {
                            base * gold_weight
                        } else {
                            base
                        }
                    })
                    .collect();
                let dist = WeightedIndex::new(&w)
                    .map_err(|e| GatewayError::Config(format!("bias weights: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ prompt_hash(&request.prompt));
                Ok(label(dist.sample(&mut rng)))
            }
            OracleScript::ByKind {
                knowledge,
                attribute,
                relation,
            } => match ctx.kind {
                PromptKind::KnowledgeDriven => knowledge.answer(request),
                PromptKind::AttributeAware => attribute.answer(request),
                PromptKind::RelationAware => relation.answer(request),
            },
            OracleScript::FailFor { sources, inner } => {
                if sources.contains(&ctx.source) {
                    Err(GatewayError::Transport {
                        attempts: 1,
                        message: format!("scripted failure for source {}", ctx.source),
                    })
                } else {
                    inner.answer(request)
                }
            }
        }
    }
}

fn label(i: usize) -> String {
    option_label_for(i).unwrap_or_default()
}

fn prompt_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub struct OracleBackend {
    script: OracleScript,
}

impl OracleBackend {
    pub fn new(script: OracleScript) -> Self {
        Self { script }
    }
}

impl CompletionBackend for OracleBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.script.answer(request)
    }
}
