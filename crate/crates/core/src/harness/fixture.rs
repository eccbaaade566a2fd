//! Synthetic graph pairs with a known alignment.
//!
//! Source entity `i` is aligned with target entity `n + i`. Both sides share
//! the attribute and relation vocabularies, the target side mirrors the
//! source triples through the alignment, and target embeddings copy their
//! source vector. A `noise` fraction of targets get an unrelated vector
//! instead, which pushes some gold targets out of the top-k.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::candidate_index::{recall_at_k, top_k_batch, CosineProvider, EmbeddingMatrix};
use crate::kg_store::{
    build_graph, write_gold, write_side, AttributeId, AttributeTriple, EntityId, EntityRef,
    GoldAlignment, RelationId, RelationalTriple, SideFiles,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub entities: usize,
    pub attributes: usize,
    pub relations: usize,
    /// Fraction of targets whose embedding is replaced by noise.
    pub noise: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            entities: 50,
            attributes: 8,
            relations: 5,
            noise: 0.0,
            dim: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub spec: FixtureSpec,
    pub recall_k: usize,
    /// Measured on the written embeddings.
    pub recall: f64,
    pub files: Vec<String>,
}

const RECALL_K: usize = 10;

fn source_uri(i: usize) -> String {
    format!("http://zh.fixture.invalid/resource/实体_{i}")
}

fn target_uri(i: usize) -> String {
    format!("http://en.fixture.invalid/resource/Entity_{i}")
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

pub fn gen_fixture(spec: &FixtureSpec, dir: &Path) -> Result<FixtureManifest, HarnessError> {
    let n = spec.entities;
    if n == 0 || spec.attributes == 0 || spec.relations == 0 || spec.dim == 0 {
        return Err(HarnessError::Usage(
            "entities, attributes, relations and dim must all be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(HarnessError::Usage(format!(
            "noise {} is not in [0, 1]",
            spec.noise
        )));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::output(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let attributes: std::collections::BTreeMap<_, _> = (0..spec.attributes)
        .map(|j| {
            (
                AttributeId(j as u32),
                format!("http://fixture.invalid/property/attr{j}"),
            )
        })
        .collect();
    let relations: std::collections::BTreeMap<_, _> = (0..spec.relations)
        .map(|j| {
            (
                RelationId(j as u32),
                format!("http://fixture.invalid/property/rel{j}"),
            )
        })
        .collect();

    let mut att_src = Vec::new();
    for i in 0..n {
        let count = rng.gen_range(1..=spec.attributes.min(4));
        let mut picked: Vec<u32> = (0..spec.attributes as u32).collect();
        picked.shuffle(&mut rng);
        for &a in &picked[..count] {
            att_src.push(AttributeTriple {
                head: EntityId(i as u32),
                attribute: AttributeId(a),
                value: format!("v{}", rng.gen_range(0..1000u32)),
            });
        }
    }
    let mut rel_src = BTreeSet::new();
    if n > 1 {
        for _ in 0..2 * n {
            let h = rng.gen_range(0..n as u32);
            let t = rng.gen_range(0..n as u32);
            if h != t {
                rel_src.insert((h, rng.gen_range(0..spec.relations as u32), t));
            }
        }
    }
    let rel_src: Vec<RelationalTriple> = rel_src
        .into_iter()
        .map(|(h, r, t)| RelationalTriple {
            head: EntityId(h),
            relation: RelationId(r),
            tail: EntityId(t),
        })
        .collect();

    let shift = |e: EntityId| EntityId(e.0 + n as u32);
    let source = build_graph(
        (0..n)
            .map(|i| {
                (
                    EntityId(i as u32),
                    EntityRef::new(EntityId(i as u32), source_uri(i)),
                )
            })
            .collect(),
        relations.clone(),
        attributes.clone(),
        rel_src.clone(),
        att_src.clone(),
    )?;
    let target = build_graph(
        (0..n)
            .map(|i| {
                let id = EntityId((n + i) as u32);
                (id, EntityRef::new(id, target_uri(i)))
            })
            .collect(),
        relations,
        attributes,
        rel_src
            .iter()
            .map(|t| RelationalTriple {
                head: shift(t.head),
                relation: t.relation,
                tail: shift(t.tail),
            })
            .collect(),
        att_src
            .iter()
            .map(|t| AttributeTriple {
                head: shift(t.head),
                ..t.clone()
            })
            .collect(),
    )?;
    let gold: GoldAlignment = (0..n as u32)
        .map(|i| (EntityId(i), shift(EntityId(i))))
        .collect();

    let src_vecs: Vec<Vec<f32>> = (0..n).map(|_| random_vector(&mut rng, spec.dim)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let noisy: BTreeSet<usize> = order[..(spec.noise * n as f64).round() as usize]
        .iter()
        .copied()
        .collect();
    let tgt_vecs: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            if noisy.contains(&i) {
                random_vector(&mut rng, spec.dim)
            } else {
                src_vecs[i].clone()
            }
        })
        .collect();
    let src_m = EmbeddingMatrix::from_rows(
        spec.dim,
        src_vecs
            .into_iter()
            .enumerate()
            .map(|(i, v)| (EntityId(i as u32), v)),
    )?;
    let tgt_m = EmbeddingMatrix::from_rows(
        spec.dim,
        tgt_vecs
            .into_iter()
            .enumerate()
            .map(|(i, v)| (shift(EntityId(i as u32)), v)),
    )?;

    let recall_k = RECALL_K.min(n);
    let provider = CosineProvider {
        source: &src_m,
        target: &tgt_m,
    };
    let sources: Vec<EntityId> = gold.keys().copied().collect();
    let sets = top_k_batch(&provider, &sources, recall_k)?;
    let recall = recall_at_k(&sets, &gold)?.recall;

    let src_files = SideFiles::in_dir(dir, 1);
    let tgt_files = SideFiles::in_dir(dir, 2);
    write_side(&source, &src_files)?;
    write_side(&target, &tgt_files)?;
    write_gold(&gold, &dir.join("ref_ent_ids"))?;
    src_m.write(&dir.join("embeddings_1"))?;
    tgt_m.write(&dir.join("embeddings_2"))?;

    let rel = |p: &PathBuf| {
        p.file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let mut files: Vec<String> = [&src_files, &tgt_files]
        .iter()
        .flat_map(|f| {
            [
                rel(&f.entities),
                rel(&f.relations),
                rel(&f.rel_triples),
                rel(&f.att_triples),
            ]
        })
        .collect();
    files.extend(["ref_ent_ids", "embeddings_1", "embeddings_2"].map(String::from));

    let manifest = FixtureManifest {
        spec: spec.clone(),
        recall_k,
        recall,
        files,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| HarnessError::output(&path, e))?;
    Ok(manifest)
}
