//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgalign::candidate_index::EmbeddingMatrix;
use kgalign::harness::{gen_fixture, FixtureManifest, FixtureSpec, RunConfig};
use kgalign::kg_store::{
    build_graph, AttributeId, AttributeTriple, EntityId, EntityRef, KnowledgeGraph, RelationId,
    RelationalTriple,
};

pub type Q = Ratio<u64>;

/// Two small random graphs over shared attribute and relation uris. Source
/// ids are `0..n`, target ids `n..n+m`. Duplicate triples and multi-valued
/// subjects are deliberately common.
pub fn random_pair(seed: u64, max_entities: usize) -> (KnowledgeGraph, KnowledgeGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_entities / 2);
    let m = rng.gen_range(2..=max_entities - n);
    let n_att = rng.gen_range(1..=6);
    let n_rel = rng.gen_range(1..=5);
    let src = random_graph(&mut rng, 0, n, n_att, n_rel, "s");
    let tgt = random_graph(&mut rng, n as u32, m, n_att, n_rel, "t");
    (src, tgt)
}

fn random_graph(
    rng: &mut ChaCha8Rng,
    base: u32,
    n: usize,
    n_att: usize,
    n_rel: usize,
    tag: &str,
) -> KnowledgeGraph {
    let entities = (0..n as u32)
        .map(|i| {
            let id = EntityId(base + i);
            (id, EntityRef::new(id, format!("http://{tag}.invalid/e{i}")))
        })
        .collect();
    let attributes = (0..n_att as u32)
        .map(|a| (AttributeId(a), format!("http://attr.invalid/a{a}")))
        .collect();
    let relations = (0..n_rel as u32)
        .map(|r| (RelationId(r), format!("http://rel.invalid/r{r}")))
        .collect();
    let ent = |rng: &mut ChaCha8Rng| EntityId(base + rng.gen_range(0..n as u32));
    let att_triples = (0..rng.gen_range(0..4 * n))
        .map(|_| AttributeTriple {
            head: ent(rng),
            attribute: AttributeId(rng.gen_range(0..n_att as u32)),
            value: rng.gen_range(0..4).to_string(),
        })
        .collect();
    let rel_triples = (0..rng.gen_range(0..3 * n))
        .map(|_| RelationalTriple {
            head: ent(rng),
            relation: RelationId(rng.gen_range(0..n_rel as u32)),
            tail: ent(rng),
        })
        .collect();
    build_graph(entities, relations, attributes, rel_triples, att_triples).unwrap()
}

/// `(side, head, object)` facts about one subject uri in both graphs.
fn facts(
    src: &KnowledgeGraph,
    tgt: &KnowledgeGraph,
    uri: &str,
    relation: bool,
) -> Vec<(u8, u32, String)> {
    let mut out = Vec::new();
    for (side, g) in [(0u8, src), (1u8, tgt)] {
        if relation {
            for t in g.rel_triples() {
                if g.relation_uri(t.relation) == Some(uri) {
                    out.push((side, t.head.0, t.tail.0.to_string()));
                }
            }
        } else {
            for t in g.att_triples() {
                if g.attribute_uri(t.attribute) == Some(uri) {
                    out.push((side, t.head.0, t.value.clone()));
                }
            }
        }
    }
    out
}

/// `|{h | (h, s, o) ∈ T ∪ T'}| / |{(h, o) | (h, s, o) ∈ T ∪ T'}|`, or None
/// when `s` never occurs.
pub fn brute_function_degree(
    src: &KnowledgeGraph,
    tgt: &KnowledgeGraph,
    uri: &str,
    relation: bool,
) -> Option<Q> {
    let f = facts(src, tgt, uri, relation);
    let heads: BTreeSet<(u8, u32)> = f.iter().map(|(s, h, _)| (*s, *h)).collect();
    let pairs: BTreeSet<&(u8, u32, String)> = f.iter().collect();
    (!pairs.is_empty()).then(|| Ratio::new(heads.len() as u64, pairs.len() as u64))
}

/// `|{h ∈ C | ∃o. (h, s, o) ∈ T'}| / |C|` with heads in subject position.
pub fn brute_frequency(
    tgt: &KnowledgeGraph,
    uri: &str,
    candidates: &[EntityId],
    relation: bool,
) -> Q {
    let holders: BTreeSet<EntityId> = candidates
        .iter()
        .copied()
        .filter(|&c| {
            if relation {
                tgt.rel_triples()
                    .iter()
                    .any(|t| t.head == c && tgt.relation_uri(t.relation) == Some(uri))
            } else {
                tgt.att_triples()
                    .iter()
                    .any(|t| t.head == c && tgt.attribute_uri(t.attribute) == Some(uri))
            }
        })
        .collect();
    Ratio::new(holders.len() as u64, candidates.len() as u64)
}

pub fn brute_identifiability(
    src: &KnowledgeGraph,
    tgt: &KnowledgeGraph,
    uri: &str,
    candidates: &[EntityId],
    relation: bool,
) -> Q {
    brute_function_degree(src, tgt, uri, relation).unwrap_or_else(|| Ratio::from_integer(0))
        * brute_frequency(tgt, uri, candidates, relation)
}

/// Random matrix with small integer entries, so exact score ties occur.
pub fn random_matrix(seed: u64, base: u32, rows: usize, dim: usize) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingMatrix::from_rows(
        dim,
        (0..rows as u32).map(|i| {
            let v = (0..dim).map(|_| rng.gen_range(-2i8..=2) as f32).collect();
            (EntityId(base + i), v)
        }),
    )
    .unwrap()
}

pub fn naive_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    let na = a
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    let nb = b
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Score every target, sort the whole list, keep the first `k`.
pub fn brute_top_k(
    src: &EmbeddingMatrix,
    tgt: &EmbeddingMatrix,
    source: EntityId,
    k: usize,
) -> Vec<(EntityId, f64)> {
    let v = src.vector(source).unwrap();
    let mut all: Vec<(EntityId, f64)> = tgt
        .ids()
        .iter()
        .map(|&t| (t, naive_cosine(v, tgt.vector(t).unwrap())))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// The winner is the `c` with `count(c) >= threshold` and
/// `count(c) > count(d)` for every other chosen `d`.
pub fn brute_tally(choices: &[EntityId], threshold: usize) -> Option<EntityId> {
    let count = |c: EntityId| choices.iter().filter(|&&x| x == c).count();
    let distinct: BTreeSet<EntityId> = choices.iter().copied().collect();
    distinct
        .iter()
        .copied()
        .find(|&c| count(c) >= threshold && distinct.iter().all(|&d| d == c || count(c) > count(d)))
}

/// Every multiset of size `n` over `0..m`, as sorted vectors.
pub fn multisets(n: usize, m: u32) -> Vec<Vec<EntityId>> {
    fn go(n: usize, from: u32, m: u32, cur: &mut Vec<EntityId>, out: &mut Vec<Vec<EntityId>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for c in from..m {
            cur.push(EntityId(c));
            go(n, c, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, 0, m, &mut Vec::new(), &mut out);
    out
}

pub fn write_fixture(dir: &Path, entities: usize, seed: u64) -> FixtureManifest {
    let spec = FixtureSpec {
        entities,
        seed,
        ..FixtureSpec::default()
    };
    gen_fixture(&spec, dir).unwrap()
}

/// Config pointing at a fixture directory with its output under `out`.
pub fn fixture_config(data: &Path, out: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.dir = Some(data.to_path_buf());
    cfg.dataset.snapshot = Some(out.join("graphs.snapshot"));
    cfg.out = out.to_path_buf();
    cfg.seed = seed;
    cfg
}

/// Counts of each element, for chi-square style checks.
pub fn histogram<T: Ord + Copy>(xs: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut h = BTreeMap::new();
    for x in xs {
        *h.entry(x).or_insert(0) += 1;
    }
    h
}
