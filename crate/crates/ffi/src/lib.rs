//! C interface to `kgalign`.
//!
//! Every fallible function returns a [`KgaStatus`]. On failure a message is
//! kept per thread and can be fetched with [`kga_last_error`]. Objects cross
//! the boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Strings returned by the library are owned by the caller
//! and must be released with [`kga_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kgalign::align_pipeline::write_report;
use kgalign::candidate_index::{
    load_embeddings, top_k, top_k_batch, CosineProvider, EmbeddingMatrix, IndexError,
};
use kgalign::harness::{align_batch, build_gateway, HarnessError, RunConfig};
use kgalign::kg_store::snapshot::GraphPair;
use kgalign::kg_store::{parse_gold, read_side, EntityId, KgError, SideFiles};
use kgalign::llm_gateway::{parse_choice, ChoiceOutcome};
use kgalign::prompt_forge::{
    build_prompt, option_label_for, PromptKind, PromptOption, PromptTemplate,
};
use kgalign::vote_engine::{sample_permutations, tally, Decision};

/// Result of every fallible call. The non-zero values match the exit codes
/// of the `kgalign` command where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgaStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    /// Missing file or bad configuration.
    Usage = 2,
    /// Malformed or inconsistent data.
    Data = 3,
    /// The model endpoint could not be reached.
    Gateway = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Counts for one graph side.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KgaGraphStats {
    pub entity_count: usize,
    pub relation_count: usize,
    pub attribute_count: usize,
    pub rel_triple_count: usize,
    pub att_triple_count: usize,
}

/// Both graph sides of a dataset plus its gold alignment.
pub struct KgaDataset {
    pair: GraphPair,
}

/// Source and target embedding matrices.
pub struct KgaIndex {
    source: EmbeddingMatrix,
    target: EmbeddingMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: KgaStatus, message: impl Into<String>) -> KgaStatus {
    set_error(message);
    status
}

fn kg_status(e: &KgError) -> KgaStatus {
    match e {
        KgError::Io { .. } => KgaStatus::Usage,
        _ => KgaStatus::Data,
    }
}

fn index_status(e: &IndexError) -> KgaStatus {
    match e {
        IndexError::Io { .. } | IndexError::KTooLarge { .. } | IndexError::ZeroK => {
            KgaStatus::Usage
        }
        IndexError::UnknownEntity(_) => KgaStatus::InvalidArgument,
        _ => KgaStatus::Data,
    }
}

fn harness_status(e: &HarnessError) -> KgaStatus {
    match e.exit_code() {
        2 => KgaStatus::Usage,
        4 => KgaStatus::Gateway,
        _ => KgaStatus::Data,
    }
}

/// Run `f`, converting panics to [`KgaStatus::Panic`].
fn guard(f: impl FnOnce() -> KgaStatus) -> KgaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(KgaStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, KgaStatus> {
    if p.is_null() {
        return Err(fail(KgaStatus::InvalidArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            KgaStatus::InvalidArgument,
            format!("{name} is not valid UTF-8"),
        )
    })
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kga_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or NULL if none.
/// Release with [`kga_string_free`].
#[no_mangle]
pub extern "C" fn kga_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |m| m.clone().into_raw())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kga_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a dataset directory in DBP15K layout (`ent_ids_1`, `triples_1`,
/// `att_triples_1`, the same for side 2, and `ref_ent_ids`).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kga_dataset_open(
    dir: *const c_char,
    out: *mut *mut KgaDataset,
) -> KgaStatus {
    guard(|| {
        if out.is_null() {
            return fail(KgaStatus::InvalidArgument, "out is null");
        }
        *out = ptr::null_mut();
        let dir = match str_arg(dir, "dir") {
            Ok(d) => Path::new(d),
            Err(s) => return s,
        };
        let load = || -> Result<GraphPair, KgError> {
            let (source, s1) = read_side(&SideFiles::in_dir(dir, 1))?;
            let (target, s2) = read_side(&SideFiles::in_dir(dir, 2))?;
            let gold = parse_gold(dir.join("ref_ent_ids"))?;
            Ok(GraphPair {
                source,
                target,
                skipped: [s1, s2],
                gold,
            })
        };
        match load() {
            Ok(pair) => {
                *out = Box::into_raw(Box::new(KgaDataset { pair }));
                KgaStatus::Ok
            }
            Err(e) => fail(kg_status(&e), e.to_string()),
        }
    })
}

/// Statistics of side 1 (source) or 2 (target).
///
/// # Safety
/// `dataset` must come from [`kga_dataset_open`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kga_dataset_stats(
    dataset: *const KgaDataset,
    side: u32,
    out: *mut KgaGraphStats,
) -> KgaStatus {
    guard(|| {
        let (Some(d), false) = (dataset.as_ref(), out.is_null()) else {
            return fail(KgaStatus::InvalidArgument, "null argument");
        };
        let g = match side {
            1 => &d.pair.source,
            2 => &d.pair.target,
            _ => {
                return fail(
                    KgaStatus::InvalidArgument,
                    format!("side must be 1 or 2, got {side}"),
                )
            }
        };
        let s = g.stats();
        *out = KgaGraphStats {
            entity_count: s.entity_count,
            relation_count: s.relation_count,
            attribute_count: s.attribute_count,
            rel_triple_count: s.rel_triple_count,
            att_triple_count: s.att_triple_count,
        };
        KgaStatus::Ok
    })
}

/// Number of gold pairs, or 0 for a NULL handle.
///
/// # Safety
/// `dataset` must be NULL or come from [`kga_dataset_open`].
#[no_mangle]
pub unsafe extern "C" fn kga_dataset_gold_count(dataset: *const KgaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.pair.gold.len())
}

/// # Safety
/// `dataset` must be NULL or come from [`kga_dataset_open`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kga_dataset_free(dataset: *mut KgaDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Load `count dim` headed embedding files for both sides.
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kga_index_open(
    source_embeddings: *const c_char,
    target_embeddings: *const c_char,
    out: *mut *mut KgaIndex,
) -> KgaStatus {
    guard(|| {
        if out.is_null() {
            return fail(KgaStatus::InvalidArgument, "out is null");
        }
        *out = ptr::null_mut();
        let (src, tgt) = match (
            str_arg(source_embeddings, "source_embeddings"),
            str_arg(target_embeddings, "target_embeddings"),
        ) {
            (Ok(s), Ok(t)) => (s, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match load_embeddings(src).and_then(|s| Ok((s, load_embeddings(tgt)?))) {
            Ok((source, target)) => {
                *out = Box::into_raw(Box::new(KgaIndex { source, target }));
                KgaStatus::Ok
            }
            Err(e) => fail(index_status(&e), e.to_string()),
        }
    })
}

/// Top-`k` targets of `source` by cosine similarity, best first. Writes `k`
/// ids to `targets` and, if `scores` is not NULL, `k` scores.
///
/// # Safety
/// `index` must come from [`kga_index_open`]; `targets` must hold `k`
/// values and `scores` must be NULL or hold `k` values.
#[no_mangle]
pub unsafe extern "C" fn kga_index_top_k(
    index: *const KgaIndex,
    source: u32,
    k: usize,
    targets: *mut u32,
    scores: *mut f64,
) -> KgaStatus {
    guard(|| {
        let (Some(ix), false) = (index.as_ref(), targets.is_null()) else {
            return fail(KgaStatus::InvalidArgument, "null argument");
        };
        match top_k(EntityId(source), k, &ix.source, &ix.target) {
            Ok(set) => {
                for (i, c) in set.candidates.iter().enumerate() {
                    *targets.add(i) = c.target.0;
                    if !scores.is_null() {
                        *scores.add(i) = c.score;
                    }
                }
                KgaStatus::Ok
            }
            Err(e) => fail(index_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `index` must be NULL or come from [`kga_index_open`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kga_index_free(index: *mut KgaIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Apply the voting rule to `len` chosen target ids. Sets `*has_winner` to
/// 1 and `*winner` to the target if a unique most-voted target has at least
/// `threshold` votes, otherwise `*has_winner` to 0.
///
/// # Safety
/// `choices` must hold `len` values (or be NULL with `len == 0`); the out
/// pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kga_tally(
    choices: *const u32,
    len: usize,
    threshold: usize,
    winner: *mut u32,
    has_winner: *mut u8,
) -> KgaStatus {
    guard(|| {
        if winner.is_null() || has_winner.is_null() || (choices.is_null() && len > 0) {
            return fail(KgaStatus::InvalidArgument, "null argument");
        }
        let ids: Vec<EntityId> = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(choices, len)
                .iter()
                .map(|&c| EntityId(c))
                .collect()
        };
        match tally(&ids, threshold).decision {
            Decision::Winner(w) => {
                *winner = w.0;
                *has_winner = 1;
            }
            Decision::NoConsensus => *has_winner = 0,
        }
        KgaStatus::Ok
    })
}

/// Up to `n` distinct orderings of `0..m`, written row by row into `out`
/// (capacity `n * m`). `*produced` receives the number of rows, which is
/// `min(n, m!)`.
///
/// # Safety
/// `out` must hold `n * m` values and `produced` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kga_sample_permutations(
    m: usize,
    n: usize,
    seed: u64,
    identity_first: bool,
    out: *mut usize,
    produced: *mut usize,
) -> KgaStatus {
    guard(|| {
        if out.is_null() || produced.is_null() {
            return fail(KgaStatus::InvalidArgument, "null argument");
        }
        match sample_permutations(m, n, seed, identity_first) {
            Ok(sample) => {
                for (r, perm) in sample.permutations.iter().enumerate() {
                    ptr::copy_nonoverlapping(perm.as_ptr(), out.add(r * m), m);
                }
                *produced = sample.permutations.len();
                KgaStatus::Ok
            }
            Err(e) => fail(KgaStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Index of the option an answer selects among `count` options labelled
/// `A`, `B`, ... with the given display names. Sets `*chosen` to 1 and
/// `*index` on a choice, `*chosen` to 0 on abstention.
///
/// # Safety
/// `raw` must be a NUL-terminated string; `names` must be NULL or hold
/// `count` NUL-terminated strings; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kga_parse_choice(
    raw: *const c_char,
    names: *const *const c_char,
    count: usize,
    index: *mut usize,
    chosen: *mut u8,
) -> KgaStatus {
    guard(|| {
        if index.is_null() || chosen.is_null() {
            return fail(KgaStatus::InvalidArgument, "null argument");
        }
        let raw = match str_arg(raw, "raw") {
            Ok(r) => r,
            Err(s) => return s,
        };
        let mut options = Vec::with_capacity(count);
        for i in 0..count {
            let name = if names.is_null() {
                String::new()
            } else {
                match str_arg(*names.add(i), "names[i]") {
                    Ok(n) => n.to_string(),
                    Err(s) => return s,
                }
            };
            let label = match option_label_for(i) {
                Ok(l) => l,
                Err(e) => return fail(KgaStatus::InvalidArgument, e.to_string()),
            };
            options.push(PromptOption {
                label,
                target: EntityId(i as u32),
                name,
                block: String::new(),
            });
        }
        match parse_choice(raw, &options).outcome {
            ChoiceOutcome::Chosen(i) => {
                *index = i;
                *chosen = 1;
            }
            ChoiceOutcome::Abstain(_) => *chosen = 0,
        }
        KgaStatus::Ok
    })
}

/// Render a knowledge-driven prompt for `source` with the given candidates
/// in the given order. `*out` receives a string to release with
/// [`kga_string_free`].
///
/// # Safety
/// `dataset` must come from [`kga_dataset_open`]; `candidates` must hold
/// `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kga_render_prompt(
    dataset: *const KgaDataset,
    source: u32,
    candidates: *const u32,
    len: usize,
    out: *mut *mut c_char,
) -> KgaStatus {
    guard(|| {
        let (Some(d), false, false) = (dataset.as_ref(), candidates.is_null(), out.is_null())
        else {
            return fail(KgaStatus::InvalidArgument, "null argument");
        };
        *out = ptr::null_mut();
        let cands: Vec<EntityId> = std::slice::from_raw_parts(candidates, len)
            .iter()
            .map(|&c| EntityId(c))
            .collect();
        match build_prompt(
            PromptKind::KnowledgeDriven,
            EntityId(source),
            &cands,
            &d.pair.source,
            &d.pair.target,
            None,
            &PromptTemplate::default(),
        ) {
            Ok(p) => {
                *out = into_c_string(p.rendered);
                KgaStatus::Ok
            }
            Err(e) => fail(KgaStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Align every gold source of `dataset` with candidates from `index`, using
/// the run settings in `config_toml` (the same format as the command-line
/// config file; an empty string means defaults, i.e. the truthful oracle).
/// The decisions are written as JSONL to `report_path`. Remote endpoints are
/// refused unless `allow_remote` is true.
///
/// # Safety
/// Handles must come from this library; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kga_align(
    dataset: *const KgaDataset,
    index: *const KgaIndex,
    config_toml: *const c_char,
    report_path: *const c_char,
    allow_remote: bool,
) -> KgaStatus {
    guard(|| {
        let (Some(d), Some(ix)) = (dataset.as_ref(), index.as_ref()) else {
            return fail(KgaStatus::InvalidArgument, "null handle");
        };
        let (toml, report) = match (
            str_arg(config_toml, "config_toml"),
            str_arg(report_path, "report_path"),
        ) {
            (Ok(c), Ok(r)) => (c, Path::new(r)),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let cfg = match RunConfig::parse(toml) {
            Ok(c) => c,
            Err(e) => return fail(KgaStatus::Usage, e),
        };
        let run = || -> Result<(), HarnessError> {
            cfg.pipeline_config()
                .validate()
                .map_err(HarnessError::from)?;
            let sources: Vec<EntityId> = d.pair.gold.keys().copied().collect();
            let target = ix.target.restricted_to(|id| d.pair.target.contains(id));
            let provider = CosineProvider {
                source: &ix.source,
                target: &target,
            };
            let sets = top_k_batch(&provider, &sources, cfg.pipeline.k_candidates)?;
            let gateway = build_gateway(&cfg, &d.pair.gold, allow_remote)?;
            let template = cfg.template()?;
            let batch = align_batch(&cfg, &d.pair, &sets, &gateway, &template)?;
            write_report(&batch, report).map_err(HarnessError::from)?;
            Ok(())
        };
        match run() {
            Ok(()) => KgaStatus::Ok,
            Err(e) => fail(harness_status(&e), e.to_string()),
        }
    })
}
