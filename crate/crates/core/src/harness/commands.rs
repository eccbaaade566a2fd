use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{CandidateOrder, DatasetPaths, RunConfig};
use super::HarnessError;
use crate::align_pipeline::{
    align_all, write_report, AlignContext, BatchResult, HitsReport, StageCounters,
};
use crate::candidate_index::{
    load_embeddings, recall_at_k, top_k_batch, write_candidates, CandidateSet, CosineProvider,
    PrecomputedScores, RecallReport, SimilarityProvider,
};
use crate::kg_store::snapshot::{self, FileFingerprint, GraphPair};
use crate::kg_store::{parse_gold, read_side, EntityId, GoldAlignment, GraphStats};
use crate::llm_gateway::{AuditLog, Gateway, OracleBackend};
use crate::prompt_forge::{build_prompt, PromptKind, PromptTemplate, MAX_OPTIONS};
use crate::triple_selector::TripleSelector;
use crate::vote_engine::{derive_seed, run_vote, VoteConfig, VoteEnv, VoteError};

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> Result<(), HarnessError> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| HarnessError::output(Path::new("<stdout>"), e))
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::output(dir, e))
}

fn fingerprints(paths: &DatasetPaths) -> Result<Vec<FileFingerprint>, HarnessError> {
    let mut files = Vec::new();
    for side in [&paths.source, &paths.target] {
        files.extend([&side.entities, &side.rel_triples, &side.att_triples]);
        if side.relations.exists() {
            files.push(&side.relations);
        }
    }
    files.push(&paths.gold);
    Ok(files
        .into_iter()
        .map(|p| FileFingerprint::of(p))
        .collect::<Result<_, _>>()?)
}

/// Both graphs and the gold alignment, from a fresh snapshot if there is
/// one. The flag tells whether the snapshot was used.
pub fn load_pair(paths: &DatasetPaths) -> Result<(GraphPair, bool), HarnessError> {
    let fps = fingerprints(paths)?;
    if let Some(pair) = snapshot::read_if_fresh(&paths.snapshot, &fps)? {
        log::info!("loaded snapshot {}", paths.snapshot.display());
        return Ok((pair, true));
    }
    let (source, skipped_src) = read_side(&paths.source)?;
    let (target, skipped_tgt) = read_side(&paths.target)?;
    let gold = parse_gold(&paths.gold)?;
    let pair = GraphPair {
        source,
        target,
        skipped: [skipped_src, skipped_tgt],
        gold,
    };
    if let Some(dir) = paths.snapshot.parent() {
        ensure_dir(dir)?;
    }
    if let Err(e) = snapshot::write(&paths.snapshot, &pair, fps) {
        log::warn!("could not write snapshot: {e}");
    }
    Ok((pair, false))
}

/// Gold sources in id order, or a seeded sample of `limit` of them.
fn eval_sources(cfg: &RunConfig, gold: &GoldAlignment) -> Vec<EntityId> {
    let mut sources: Vec<EntityId> = gold.keys().copied().collect();
    if let Some(limit) = cfg.limit.filter(|&l| l < sources.len()) {
        sources.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        sources.truncate(limit);
        sources.sort();
    }
    sources
}

/// Top-`k` candidate sets for `sources`, from the similarity file if one is
/// configured and from embeddings otherwise.
pub fn compute_candidates(
    paths: &DatasetPaths,
    pair: &GraphPair,
    sources: &[EntityId],
    k: usize,
) -> Result<Vec<CandidateSet>, HarnessError> {
    let sets = match &paths.similarity {
        Some(path) => {
            let scores = PrecomputedScores::load(path)?;
            top_k_batch(&scores as &dyn SimilarityProvider, sources, k)?
        }
        None => {
            let src = load_embeddings(&paths.source_embeddings)?;
            let tgt = load_embeddings(&paths.target_embeddings)?
                .restricted_to(|id| pair.target.contains(id));
            let provider = CosineProvider {
                source: &src,
                target: &tgt,
            };
            top_k_batch(&provider, sources, k)?
        }
    };
    for set in &sets {
        if let Some(c) = set
            .candidates
            .iter()
            .find(|c| !pair.target.contains(c.target))
        {
            return Err(HarnessError::Config(format!(
                "candidate {} of source {} is not a target entity",
                c.target, set.source
            )));
        }
    }
    Ok(sets)
}

/// Gateway for a run: the configured endpoint, or the scripted oracle.
pub fn build_gateway(
    cfg: &RunConfig,
    gold: &GoldAlignment,
    allow_remote: bool,
) -> Result<Gateway, HarnessError> {
    let g = &cfg.gateway;
    let gateway = match g.endpoint_config() {
        Some(endpoint) => {
            if !allow_remote {
                return Err(HarnessError::Usage(format!(
                    "refusing to call {} without --allow-remote",
                    endpoint.url
                )));
            }
            Gateway::http(&endpoint, g.settings())?
        }
        None => Gateway::new(
            Box::new(OracleBackend::new(g.oracle_script(gold, cfg.seed)?)),
            g.settings(),
        ),
    };
    Ok(match &g.audit {
        Some(path) => {
            gateway.with_audit(AuditLog::open(path).map_err(|e| HarnessError::output(path, e))?)
        }
        None => gateway,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub source: GraphStats,
    pub target: GraphStats,
    pub skipped: [usize; 2],
    pub gold_pairs: usize,
    pub from_snapshot: bool,
}

pub fn cmd_ingest(cfg: &RunConfig, out: &mut dyn Write) -> Result<IngestSummary, HarnessError> {
    let paths = cfg.dataset_paths()?;
    let (pair, from_snapshot) = load_pair(&paths)?;
    let summary = IngestSummary {
        source: pair.source.stats(),
        target: pair.target.stats(),
        skipped: pair.skipped,
        gold_pairs: pair.gold.len(),
        from_snapshot,
    };
    emit(
        out,
        "side\tentities\trelations\tattributes\trel_triples\tatt_triples\tskipped_att_lines",
    )?;
    for (name, s, skipped) in [
        ("source", &summary.source, summary.skipped[0]),
        ("target", &summary.target, summary.skipped[1]),
    ] {
        emit(
            out,
            format!(
                "{name}\t{}\t{}\t{}\t{}\t{}\t{skipped}",
                s.entity_count,
                s.relation_count,
                s.attribute_count,
                s.rel_triple_count,
                s.att_triple_count
            ),
        )?;
    }
    emit(out, format!("gold pairs\t{}", summary.gold_pairs))?;
    emit(
        out,
        format!(
            "snapshot\t{}",
            if from_snapshot { "reused" } else { "written" }
        ),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidatesSummary {
    pub k: usize,
    pub recall: RecallReport,
    pub path: PathBuf,
}

pub fn cmd_candidates(
    cfg: &RunConfig,
    out: &mut dyn Write,
) -> Result<CandidatesSummary, HarnessError> {
    let paths = cfg.dataset_paths()?;
    let (pair, _) = load_pair(&paths)?;
    let k = cfg.pipeline.k_candidates;
    let sources = eval_sources(cfg, &pair.gold);
    let sets = compute_candidates(&paths, &pair, &sources, k)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("candidates.tsv");
    write_candidates(&sets, &path)?;
    let recall = recall_at_k(&sets, &pair.gold)?;
    emit(out, format!("recall@{k}\t{:.4}", recall.recall))?;
    emit(out, format!("candidates\t{}", path.display()))?;
    Ok(CandidatesSummary { k, recall, path })
}

/// Run the staged pipeline over prepared candidate sets.
pub fn align_batch(
    cfg: &RunConfig,
    pair: &GraphPair,
    sets: &[CandidateSet],
    gateway: &Gateway,
    template: &PromptTemplate,
) -> Result<BatchResult, HarnessError> {
    let config = cfg.pipeline_config();
    let selector = TripleSelector::new(&pair.source, &pair.target);
    let ctx = AlignContext {
        source_kg: &pair.source,
        target_kg: &pair.target,
        selector: &selector,
        template,
        gateway,
        config: &config,
    };
    Ok(align_all(&ctx, sets)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignSummary {
    pub hits: HitsReport,
    pub counters: StageCounters,
    pub report: PathBuf,
}

fn ordered_sets(
    cfg: &RunConfig,
    sets: Vec<CandidateSet>,
) -> Result<Vec<CandidateSet>, HarnessError> {
    let order = cfg.order()?;
    Ok(sets.iter().map(|s| order.apply(s, cfg.seed)).collect())
}

/// Render the first prompts the pipeline would send, without calling the
/// gateway.
fn dry_run(
    cfg: &RunConfig,
    pair: &GraphPair,
    sets: &[CandidateSet],
    template: &PromptTemplate,
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    let selector = TripleSelector::new(&pair.source, &pair.target);
    for set in sets.iter().take(3) {
        let candidates = set.targets();
        for (kind, k) in [
            (PromptKind::AttributeAware, cfg.pipeline.k_attributes),
            (PromptKind::RelationAware, cfg.pipeline.k_relations),
        ] {
            let tk = kind.triple_kind().expect("stage kinds carry triples");
            let sel = selector
                .select_for_prompt(set.source, &candidates, tk, k)
                .map_err(crate::align_pipeline::AlignError::from)?;
            if sel.is_vacuous() {
                continue;
            }
            let prompt = build_prompt(
                kind,
                set.source,
                &candidates,
                &pair.source,
                &pair.target,
                Some(&sel),
                template,
            )
            .map_err(VoteError::from)?;
            emit(
                out,
                format!("--- source {} ({}) ---", set.source, kind.as_str()),
            )?;
            emit(out, prompt.rendered)?;
            break;
        }
    }
    Ok(())
}

/// `Ok(None)` for a dry run.
pub fn cmd_align(
    cfg: &RunConfig,
    allow_remote: bool,
    dry: bool,
    out: &mut dyn Write,
) -> Result<Option<AlignSummary>, HarnessError> {
    cfg.pipeline_config().validate()?;
    let paths = cfg.dataset_paths()?;
    let (pair, _) = load_pair(&paths)?;
    let sources = eval_sources(cfg, &pair.gold);
    let sets = compute_candidates(&paths, &pair, &sources, cfg.pipeline.k_candidates)?;
    let sets = ordered_sets(cfg, sets)?;
    let template = cfg.template()?;
    if dry {
        dry_run(cfg, &pair, &sets, &template, out)?;
        return Ok(None);
    }
    let gateway = build_gateway(cfg, &pair.gold, allow_remote)?;
    let batch = align_batch(cfg, &pair, &sets, &gateway, &template)?;

    ensure_dir(&cfg.out)?;
    let report = cfg.out.join("decisions.jsonl");
    write_report(&batch, &report)?;
    emit(out, "stage\tcount")?;
    for (stage, n) in &batch.counters.by_stage {
        let name = serde_json::to_value(stage).expect("stage serializes");
        emit(out, format!("{}\t{n}", name.as_str().unwrap_or_default()))?;
    }
    emit(out, format!("aborted\t{}", batch.counters.aborted))?;
    let hits = batch.hits_at_1(&pair.gold)?;
    emit(out, format!("hits@1 strict\t{:.4}", hits.strict))?;
    emit(out, format!("hits@1 answered\t{:.4}", hits.answered_only))?;
    emit(out, format!("report\t{}", report.display()))?;
    if batch.counters.aborted > 0 {
        return Err(HarnessError::GatewayExhausted {
            aborted: batch.counters.aborted,
            total: batch.results.len(),
        });
    }
    Ok(Some(AlignSummary {
        hits,
        counters: batch.counters,
        report,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub setting: String,
    /// Mean strict Hits@1 over the repeats.
    pub hits: f64,
    pub evaluated: usize,
    /// Mean fraction of sources that got a winner.
    pub answered: f64,
}

/// One vote of `kind` per source; returns (correct, answered).
fn experiment_pass(
    pair: &GraphPair,
    sets: &[CandidateSet],
    kind: PromptKind,
    k_triples: usize,
    vote: VoteConfig,
    gateway: &Gateway,
    template: &PromptTemplate,
) -> Result<(usize, usize), HarnessError> {
    let selector = TripleSelector::new(&pair.source, &pair.target);
    let env = VoteEnv {
        source_kg: &pair.source,
        target_kg: &pair.target,
        template,
        gateway,
    };
    let winners = sets
        .par_iter()
        .map(|set| -> Result<Option<EntityId>, HarnessError> {
            let candidates = set.targets();
            let selections = match kind.triple_kind() {
                None => None,
                Some(tk) => {
                    let sel = selector
                        .select_for_prompt(set.source, &candidates, tk, k_triples)
                        .map_err(crate::align_pipeline::AlignError::from)?;
                    if sel.is_vacuous() {
                        return Ok(None);
                    }
                    Some(sel)
                }
            };
            let config = vote.with_seed(derive_seed(vote.seed, set.source, kind));
            let outcome = run_vote(
                &env,
                set.source,
                &candidates,
                kind,
                selections.as_ref(),
                &config,
            )?;
            Ok(outcome.decision.winner())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let answered = winners.iter().filter(|w| w.is_some()).count();
    let correct = sets
        .iter()
        .zip(&winners)
        .filter(|(s, w)| w.is_some() && pair.gold.get(&s.source) == w.as_ref())
        .count();
    Ok((correct, answered))
}

/// A named experiment setting: candidate sets for a given repeat seed.
type Setting<'a> = (String, Box<dyn Fn(u64) -> Vec<CandidateSet> + 'a>);

fn experiment_rows(
    cfg: &RunConfig,
    pair: &GraphPair,
    allow_remote: bool,
    settings: Vec<Setting<'_>>,
) -> Result<Vec<ExperimentRow>, HarnessError> {
    let exp = &cfg.experiment;
    if exp.votes == 0 || exp.repeats == 0 {
        return Err(HarnessError::Usage(
            "experiment votes and repeats must be at least 1".into(),
        ));
    }
    let template = cfg.template()?;
    let k_triples = match exp.prompt_kind {
        PromptKind::RelationAware => cfg.pipeline.k_relations,
        _ => cfg.pipeline.k_attributes,
    };
    let mut rows = Vec::new();
    for (name, make_sets) in settings {
        let (mut hits, mut answered, mut evaluated) = (0.0, 0.0, 0);
        for r in 0..exp.repeats {
            let seed = cfg.seed.wrapping_add(r as u64);
            let run_cfg = RunConfig {
                seed,
                ..cfg.clone()
            };
            let gateway = build_gateway(&run_cfg, &pair.gold, allow_remote)?;
            let sets = make_sets(seed);
            evaluated = sets.len();
            if evaluated == 0 {
                return Err(HarnessError::Align(
                    crate::align_pipeline::AlignError::EmptyEval,
                ));
            }
            let vote = VoteConfig {
                rounds: exp.votes,
                seed,
                identity_first: cfg.pipeline.identity_first,
            };
            let (c, a) = experiment_pass(
                pair,
                &sets,
                exp.prompt_kind,
                k_triples,
                vote,
                &gateway,
                &template,
            )?;
            hits += c as f64 / evaluated as f64;
            answered += a as f64 / evaluated as f64;
        }
        rows.push(ExperimentRow {
            setting: name,
            hits: hits / exp.repeats as f64,
            evaluated,
            answered: answered / exp.repeats as f64,
        });
    }
    Ok(rows)
}

fn write_table(
    cfg: &RunConfig,
    file: &str,
    header: &str,
    rows: &[ExperimentRow],
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    let mut text = format!("{header}\thits@1\tanswered\tevaluated\n");
    for r in rows {
        text.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{}\n",
            r.setting, r.hits, r.answered, r.evaluated
        ));
    }
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join(file);
    fs::write(&path, &text).map_err(|e| HarnessError::output(&path, e))?;
    out.write_all(text.as_bytes())
        .map_err(|e| HarnessError::output(Path::new("<stdout>"), e))
}

/// Hits@1 per candidate order.
pub fn cmd_experiment_order(
    cfg: &RunConfig,
    allow_remote: bool,
    out: &mut dyn Write,
) -> Result<Vec<ExperimentRow>, HarnessError> {
    let orders = cfg
        .experiment
        .orders
        .iter()
        .map(|o| o.parse::<CandidateOrder>().map_err(HarnessError::Usage))
        .collect::<Result<Vec<_>, _>>()?;
    if orders.is_empty() {
        return Err(HarnessError::Usage("no candidate orders to compare".into()));
    }
    let k = cfg.pipeline.k_candidates;
    check_size(k)?;
    let paths = cfg.dataset_paths()?;
    let (pair, _) = load_pair(&paths)?;
    let sources = eval_sources(cfg, &pair.gold);
    let sets = compute_candidates(&paths, &pair, &sources, k)?;
    let settings = orders
        .iter()
        .map(|&order| {
            let sets = &sets;
            let f: Box<dyn Fn(u64) -> Vec<CandidateSet>> =
                Box::new(move |seed| sets.iter().map(|s| order.apply(s, seed)).collect());
            (order.name(), f)
        })
        .collect();
    let rows = experiment_rows(cfg, &pair, allow_remote, settings)?;
    write_table(cfg, "exp_order.tsv", "order", &rows, out)?;
    Ok(rows)
}

fn check_size(k: usize) -> Result<(), HarnessError> {
    if k == 0 || k > MAX_OPTIONS {
        return Err(HarnessError::Usage(format!(
            "candidate set size {k} must be between 1 and {MAX_OPTIONS}"
        )));
    }
    Ok(())
}

/// Hits@1 per candidate set size. Only sources whose gold target is within
/// the smallest size are evaluated, so every setting sees the gold option.
pub fn cmd_experiment_size(
    cfg: &RunConfig,
    allow_remote: bool,
    out: &mut dyn Write,
) -> Result<Vec<ExperimentRow>, HarnessError> {
    let sizes = cfg.experiment.sizes.clone();
    let (Some(&min), Some(&max)) = (sizes.iter().min(), sizes.iter().max()) else {
        return Err(HarnessError::Usage("no candidate sizes given".into()));
    };
    for &s in &sizes {
        check_size(s)?;
    }
    let paths = cfg.dataset_paths()?;
    let (pair, _) = load_pair(&paths)?;
    let sources = eval_sources(cfg, &pair.gold);
    let sets: Vec<CandidateSet> = compute_candidates(&paths, &pair, &sources, max)?
        .into_iter()
        .filter(|s| {
            pair.gold
                .get(&s.source)
                .is_some_and(|g| s.truncated(min).contains(*g))
        })
        .collect();
    let order = cfg.order()?;
    let settings = sizes
        .iter()
        .map(|&size| {
            let sets = &sets;
            let f: Box<dyn Fn(u64) -> Vec<CandidateSet>> = Box::new(move |seed| {
                sets.iter()
                    .map(|s| order.apply(&s.truncated(size), seed))
                    .collect()
            });
            (size.to_string(), f)
        })
        .collect();
    let rows = experiment_rows(cfg, &pair, allow_remote, settings)?;
    write_table(cfg, "exp_size.tsv", "size", &rows, out)?;
    Ok(rows)
}
