//! Configuration, synthetic fixtures and the command drivers behind the
//! `kgalign` binary.

mod commands;
mod config;
mod fixture;

pub use commands::{
    align_batch, build_gateway, cmd_align, cmd_candidates, cmd_experiment_order,
    cmd_experiment_size, cmd_ingest, compute_candidates, load_pair, AlignSummary,
    CandidatesSummary, ExperimentRow, IngestSummary,
};
pub use config::{
    CandidateOrder, DatasetPaths, DatasetSection, ExperimentSettings, GatewaySection, OracleChoice,
    PipelineSection, RunConfig, API_KEY_ENV,
};
pub use fixture::{gen_fixture, FixtureManifest, FixtureSpec};

use thiserror::Error;

use crate::align_pipeline::AlignError;
use crate::candidate_index::IndexError;
use crate::kg_store::KgError;
use crate::llm_gateway::GatewayError;
use crate::vote_engine::VoteError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_GATEWAY: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{aborted} of {total} sources aborted on gateway failures")]
    GatewayExhausted { aborted: usize, total: usize },
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

impl From<VoteError> for HarnessError {
    fn from(e: VoteError) -> Self {
        HarnessError::Align(AlignError::Vote(e))
    }
}

impl HarnessError {
    pub(crate) fn output(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Output {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 usage or configuration (including missing
    /// input files), 3 data integrity, 4 gateway exhaustion.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Config(_) | HarnessError::Output { .. } => {
                EXIT_USAGE
            }
            HarnessError::Kg(KgError::Io { .. }) => EXIT_USAGE,
            HarnessError::Kg(_) => EXIT_DATA,
            HarnessError::Index(e) => match e {
                IndexError::Io { .. } | IndexError::KTooLarge { .. } | IndexError::ZeroK => {
                    EXIT_USAGE
                }
                _ => EXIT_DATA,
            },
            HarnessError::Align(e) => match e {
                AlignError::Config(_) | AlignError::Io { .. } | AlignError::Pool(_) => EXIT_USAGE,
                AlignError::Vote(VoteError::RunAborted { .. }) => EXIT_GATEWAY,
                _ => EXIT_DATA,
            },
            HarnessError::Gateway(GatewayError::Config(_)) => EXIT_USAGE,
            HarnessError::Gateway(_) | HarnessError::GatewayExhausted { .. } => EXIT_GATEWAY,
        }
    }
}
