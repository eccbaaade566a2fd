use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::HarnessError;
use crate::align_pipeline::{FallbackPolicy, PipelineConfig};
use crate::candidate_index::CandidateSet;
use crate::kg_store::{GoldAlignment, SideFiles};
use crate::llm_gateway::{EndpointConfig, GatewaySettings, OracleScript, RetryPolicy};
use crate::prompt_forge::{PromptKind, PromptTemplate};
use crate::vote_engine::VoteConfig;

/// Environment variable holding the endpoint API key. Keys are never read
/// from the config file.
pub const API_KEY_ENV: &str = "KGALIGN_API_KEY";

/// Contents of a TOML run file. Every field has a default, so an empty file
/// (or none at all) is valid.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Use a seeded sample of this many gold sources instead of all.
    pub limit: Option<usize>,
    pub dataset: DatasetSection,
    pub pipeline: PipelineSection,
    pub gateway: GatewaySection,
    pub experiment: ExperimentSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            limit: None,
            dataset: DatasetSection::default(),
            pipeline: PipelineSection::default(),
            gateway: GatewaySection::default(),
            experiment: ExperimentSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory in DBP15K layout. Individual files below override it.
    pub dir: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub source_att_triples: Option<PathBuf>,
    pub target_att_triples: Option<PathBuf>,
    pub source_embeddings: Option<PathBuf>,
    pub target_embeddings: Option<PathBuf>,
    /// Precomputed `source TAB target TAB score` file; replaces embeddings.
    pub similarity: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub k_candidates: usize,
    pub k_attributes: usize,
    pub k_relations: usize,
    pub votes: usize,
    pub identity_first: bool,
    pub fallback: FallbackPolicy,
    pub workers: usize,
    pub template: Option<PathBuf>,
    /// Candidate order used by `align`.
    pub order: String,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            k_candidates: p.k_candidates,
            k_attributes: p.k_attributes,
            k_relations: p.k_relations,
            votes: p.vote.rounds,
            identity_first: p.vote.identity_first,
            fallback: p.fallback,
            workers: p.workers,
            template: None,
            order: "similarity".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    /// Chat-completions endpoint. Without one, the scripted oracle answers.
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_seed: Option<u64>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub max_in_flight: usize,
    pub rate_per_sec: Option<f64>,
    pub audit: Option<PathBuf>,
    /// `truthful`, `first`, `fixed:TEXT` or `biased`.
    pub oracle: String,
    /// Per-position weights of the biased oracle; missing positions reuse
    /// the last entry.
    pub bias_weights: Vec<f64>,
    /// Extra weight of the gold option for the biased oracle.
    pub bias_gold_weight: f64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let s = GatewaySettings::default();
        let r = RetryPolicy::default();
        Self {
            endpoint: None,
            model: s.model,
            temperature: s.temperature,
            max_tokens: s.max_tokens,
            request_seed: None,
            timeout_secs: 60,
            max_retries: r.max_retries,
            base_delay_ms: r.base_delay.as_millis() as u64,
            max_delay_ms: r.max_delay.as_millis() as u64,
            max_in_flight: s.max_in_flight,
            rate_per_sec: None,
            audit: None,
            oracle: "truthful".into(),
            bias_weights: vec![1.0],
            bias_gold_weight: 4.0,
        }
    }
}

impl GatewaySection {
    pub fn settings(&self) -> GatewaySettings {
        GatewaySettings {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.request_seed,
            max_in_flight: self.max_in_flight,
            rate_per_sec: self.rate_per_sec,
        }
    }

    pub fn endpoint_config(&self) -> Option<EndpointConfig> {
        self.endpoint.as_ref().map(|url| EndpointConfig {
            url: url.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(self.timeout_secs),
            retry: RetryPolicy {
                max_retries: self.max_retries,
                base_delay: Duration::from_millis(self.base_delay_ms),
                max_delay: Duration::from_millis(self.max_delay_ms),
            },
        })
    }

    pub fn oracle_script(
        &self,
        gold: &GoldAlignment,
        seed: u64,
    ) -> Result<OracleScript, HarnessError> {
        let choice: OracleChoice = self.oracle.parse().map_err(HarnessError::Usage)?;
        Ok(match choice {
            OracleChoice::Truthful => OracleScript::Truthful(gold.clone()),
            OracleChoice::First => OracleScript::FirstOption,
            OracleChoice::Fixed(text) => OracleScript::FixedAnswer(text),
            OracleChoice::Biased => {
                let bad_weight = self.bias_weights.iter().any(|w| w.is_nan() || *w < 0.0);
                if bad_weight || self.bias_gold_weight.is_nan() || self.bias_gold_weight <= 0.0 {
                    return Err(HarnessError::Config(
                        "bias weights must be non-negative and the gold weight positive".into(),
                    ));
                }
                OracleScript::PositionBiased {
                    weights: self.bias_weights.clone(),
                    gold_weight: self.bias_gold_weight,
                    gold: gold.clone(),
                    seed,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub orders: Vec<String>,
    pub sizes: Vec<usize>,
    pub prompt_kind: PromptKind,
    /// Voting rounds per question. One round shows each ordering as is.
    pub votes: usize,
    /// Runs per setting, averaged; run `r` uses seed `seed + r`.
    pub repeats: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            orders: vec!["similarity".into(), "random".into(), "reversed".into()],
            sizes: vec![10, 20, 30, 40, 50],
            prompt_kind: PromptKind::KnowledgeDriven,
            votes: 1,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleChoice {
    Truthful,
    First,
    Fixed(String),
    Biased,
}

impl FromStr for OracleChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truthful" => Ok(Self::Truthful),
            "first" => Ok(Self::First),
            "biased" => Ok(Self::Biased),
            _ => match s.strip_prefix("fixed:") {
                Some(text) => Ok(Self::Fixed(text.to_string())),
                None => Err(format!(
                    "unknown oracle '{s}' (expected truthful, first, fixed:TEXT or biased)"
                )),
            },
        }
    }
}

/// How candidates are ordered before prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateOrder {
    Similarity,
    /// Shuffled per source; `None` uses the run seed.
    Random(Option<u64>),
    Reversed,
}

impl FromStr for CandidateOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "similarity" => Ok(Self::Similarity),
            "random" => Ok(Self::Random(None)),
            "reversed" => Ok(Self::Reversed),
            _ => match s.strip_prefix("random:").map(str::parse::<u64>) {
                Some(Ok(seed)) => Ok(Self::Random(Some(seed))),
                _ => Err(format!(
                    "unknown candidate order '{s}' (expected similarity, random, random:SEED or reversed)"
                )),
            },
        }
    }
}

impl CandidateOrder {
    pub fn name(&self) -> String {
        match self {
            Self::Similarity => "similarity".into(),
            Self::Random(None) => "random".into(),
            Self::Random(Some(s)) => format!("random:{s}"),
            Self::Reversed => "reversed".into(),
        }
    }

    pub fn apply(&self, set: &CandidateSet, run_seed: u64) -> CandidateSet {
        let mut out = set.clone();
        match self {
            Self::Similarity => {}
            Self::Reversed => out.candidates.reverse(),
            Self::Random(seed) => {
                let seed = seed.unwrap_or(run_seed) ^ u64::from(set.source.0).rotate_left(32);
                out.candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            }
        }
        out
    }
}

/// Every input file of a run.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub source: SideFiles,
    pub target: SideFiles,
    pub gold: PathBuf,
    pub source_embeddings: PathBuf,
    pub target_embeddings: PathBuf,
    pub similarity: Option<PathBuf>,
    pub snapshot: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn dataset_paths(&self) -> Result<DatasetPaths, HarnessError> {
        let d = &self.dataset;
        let dir = d.dir.clone().unwrap_or_default();
        if d.dir.is_none() && d.gold.is_none() {
            return Err(HarnessError::Usage(
                "no dataset configured (set dataset.dir or pass --data)".into(),
            ));
        }
        let mut source = SideFiles::in_dir(&dir, 1);
        let mut target = SideFiles::in_dir(&dir, 2);
        if let Some(p) = &d.source_att_triples {
            source.att_triples = p.clone();
        }
        if let Some(p) = &d.target_att_triples {
            target.att_triples = p.clone();
        }
        Ok(DatasetPaths {
            source,
            target,
            gold: d.gold.clone().unwrap_or_else(|| dir.join("ref_ent_ids")),
            source_embeddings: d
                .source_embeddings
                .clone()
                .unwrap_or_else(|| dir.join("embeddings_1")),
            target_embeddings: d
                .target_embeddings
                .clone()
                .unwrap_or_else(|| dir.join("embeddings_2")),
            similarity: d.similarity.clone(),
            snapshot: d
                .snapshot
                .clone()
                .unwrap_or_else(|| self.out.join("graphs.snapshot")),
        })
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            k_candidates: p.k_candidates,
            k_attributes: p.k_attributes,
            k_relations: p.k_relations,
            vote: VoteConfig {
                rounds: p.votes,
                seed: self.seed,
                identity_first: p.identity_first,
            },
            fallback: p.fallback,
            workers: p.workers,
        }
    }

    pub fn template(&self) -> Result<PromptTemplate, HarnessError> {
        match &self.pipeline.template {
            None => Ok(PromptTemplate::default()),
            Some(path) => {
                PromptTemplate::from_file(path).map_err(|e| HarnessError::Config(e.to_string()))
            }
        }
    }

    pub fn order(&self) -> Result<CandidateOrder, HarnessError> {
        self.pipeline.order.parse().map_err(HarnessError::Usage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate_index::Candidate;
    use crate::kg_store::EntityId;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.pipeline.k_candidates, 10);
        assert_eq!(c.pipeline.votes, 5);
        assert_eq!(c.gateway.max_in_flight, 8);
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::parse(
            r#"
            seed = 7
            [dataset]
            dir = "data/zh_en"
            [pipeline]
            votes = 3
            fallback = "none"
            [gateway]
            endpoint = "http://localhost:8000/v1"
            model = "qwen"
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.pipeline.votes, 3);
        assert_eq!(c.pipeline.fallback, FallbackPolicy::None);
        let p = c.dataset_paths().unwrap();
        assert!(p.gold.ends_with("ref_ent_ids"));
        assert!(p.source.att_triples.ends_with("att_triples_1"));
    }

    #[test]
    fn api_key_in_file_is_rejected() {
        assert!(RunConfig::parse("[gateway]\napi_key = \"sk-x\"\n").is_err());
    }

    #[test]
    fn oracle_and_order_strings() {
        assert_eq!(
            "fixed:I cannot".parse::<OracleChoice>().unwrap(),
            OracleChoice::Fixed("I cannot".into())
        );
        assert!("clever".parse::<OracleChoice>().is_err());
        assert_eq!(
            "random:3".parse::<CandidateOrder>().unwrap(),
            CandidateOrder::Random(Some(3))
        );
        assert!("sideways".parse::<CandidateOrder>().is_err());
    }

    #[test]
    fn orders_permute_candidates() {
        let set = CandidateSet {
            source: EntityId(1),
            candidates: (0..5)
                .map(|i| Candidate {
                    target: EntityId(i),
                    score: 1.0 - i as f64 / 10.0,
                })
                .collect(),
        };
        let rev = CandidateOrder::Reversed.apply(&set, 0);
        assert_eq!(
            rev.targets(),
            vec![
                EntityId(4),
                EntityId(3),
                EntityId(2),
                EntityId(1),
                EntityId(0)
            ]
        );
        let a = CandidateOrder::Random(None).apply(&set, 9);
        let mut sorted = a.targets();
        sorted.sort();
        assert_eq!(sorted, set.targets());
        assert_eq!(a, CandidateOrder::Random(None).apply(&set, 9));
    }
}
