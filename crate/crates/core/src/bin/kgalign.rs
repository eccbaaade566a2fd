use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use kgalign::align_pipeline::FallbackPolicy;
use kgalign::harness::{
    cmd_align, cmd_candidates, cmd_experiment_order, cmd_experiment_size, cmd_ingest, gen_fixture,
    CandidateOrder, FixtureSpec, HarnessError, OracleChoice, RunConfig,
};
use kgalign::prompt_forge::PromptKind;

/// Entity alignment by multiple-choice reasoning over retrieved candidates.
#[derive(Parser)]
#[command(name = "kgalign", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory in DBP15K layout.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// truthful, first, fixed:TEXT or biased.
    #[arg(long, global = true)]
    oracle: Option<OracleChoice>,
    /// Chat-completions endpoint; requires --allow-remote.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Candidates per source entity.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Voting rounds per question.
    #[arg(long, global = true)]
    votes: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Permit requests to a real endpoint.
    #[arg(long, global = true)]
    allow_remote: bool,
    /// Source entities processed concurrently.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seeded sample of this many gold sources.
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Append every gateway call to this JSONL file.
    #[arg(long, global = true)]
    audit: Option<PathBuf>,
    /// Let the first voting round use a sampled ordering too.
    #[arg(long, global = true)]
    no_identity_first: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse both graphs, print their statistics and cache a snapshot.
    Ingest,
    /// Retrieve top-k candidates and report recall@k.
    Candidates,
    /// Run the staged pipeline and report Hits@1.
    Align {
        /// Print the first three prompts instead of calling the gateway.
        #[arg(long)]
        dry_run: bool,
        /// top-similarity or none.
        #[arg(long)]
        fallback: Option<FallbackPolicy>,
        /// similarity, random, random:SEED or reversed.
        #[arg(long)]
        order: Option<CandidateOrder>,
    },
    /// Compare candidate orders.
    ExpOrder {
        #[arg(long, value_delimiter = ',')]
        orders: Vec<CandidateOrder>,
        #[arg(long)]
        prompt_kind: Option<PromptKind>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Compare candidate set sizes.
    ExpSize {
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        prompt_kind: Option<PromptKind>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        order: Option<CandidateOrder>,
    },
    /// Write a synthetic dataset with known alignment.
    GenFixture {
        #[arg(long, default_value_t = 50)]
        entities: usize,
        #[arg(long, default_value_t = 8)]
        attributes: usize,
        #[arg(long, default_value_t = 5)]
        relations: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 32)]
        dim: usize,
    },
}

fn build_config(c: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &c.data {
        cfg.dataset.dir = Some(d.clone());
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.oracle {
        cfg.gateway.oracle = match o {
            OracleChoice::Truthful => "truthful".into(),
            OracleChoice::First => "first".into(),
            OracleChoice::Biased => "biased".into(),
            OracleChoice::Fixed(t) => format!("fixed:{t}"),
        };
    }
    if let Some(e) = &c.endpoint {
        cfg.gateway.endpoint = Some(e.clone());
    }
    if let Some(m) = &c.model {
        cfg.gateway.model = m.clone();
    }
    if let Some(k) = c.k {
        cfg.pipeline.k_candidates = k;
    }
    if let Some(v) = c.votes {
        cfg.pipeline.votes = v;
        cfg.experiment.votes = v;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(w) = c.workers {
        cfg.pipeline.workers = w;
    }
    if c.limit.is_some() {
        cfg.limit = c.limit;
    }
    if let Some(a) = &c.audit {
        cfg.gateway.audit = Some(a.clone());
    }
    if c.no_identity_first {
        cfg.pipeline.identity_first = false;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = build_config(&cli.common)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let allow_remote = cli.common.allow_remote;
    match cli.command {
        Command::Ingest => {
            cmd_ingest(&cfg, &mut out)?;
        }
        Command::Candidates => {
            cmd_candidates(&cfg, &mut out)?;
        }
        Command::Align {
            dry_run,
            fallback,
            order,
        } => {
            if let Some(f) = fallback {
                cfg.pipeline.fallback = f;
            }
            if let Some(o) = order {
                cfg.pipeline.order = o.name();
            }
            cmd_align(&cfg, allow_remote, dry_run, &mut out)?;
        }
        Command::ExpOrder {
            orders,
            prompt_kind,
            repeats,
        } => {
            if !orders.is_empty() {
                cfg.experiment.orders = orders.iter().map(CandidateOrder::name).collect();
            }
            if let Some(k) = prompt_kind {
                cfg.experiment.prompt_kind = k;
            }
            if let Some(r) = repeats {
                cfg.experiment.repeats = r;
            }
            cmd_experiment_order(&cfg, allow_remote, &mut out)?;
        }
        Command::ExpSize {
            sizes,
            prompt_kind,
            repeats,
            order,
        } => {
            if !sizes.is_empty() {
                cfg.experiment.sizes = sizes;
            }
            if let Some(k) = prompt_kind {
                cfg.experiment.prompt_kind = k;
            }
            if let Some(r) = repeats {
                cfg.experiment.repeats = r;
            }
            if let Some(o) = order {
                cfg.pipeline.order = o.name();
            }
            cmd_experiment_size(&cfg, allow_remote, &mut out)?;
        }
        Command::GenFixture {
            entities,
            attributes,
            relations,
            noise,
            dim,
        } => {
            let spec = FixtureSpec {
                entities,
                attributes,
                relations,
                noise,
                dim,
                seed: cfg.seed,
            };
            let dir = cli
                .common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("fixture"));
            let m = gen_fixture(&spec, &dir)?;
            writeln!(out, "fixture\t{}", dir.display()).context("writing to stdout")?;
            writeln!(out, "recall@{}\t{:.4}", m.recall_k, m.recall).context("writing to stdout")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e
                .downcast_ref::<HarnessError>()
                .map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
