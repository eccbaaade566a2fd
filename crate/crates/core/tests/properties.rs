mod common;

use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use proptest::prelude::*;

use kgalign::align_pipeline::{FallbackPolicy, Stage};
use kgalign::candidate_index::{top_k, CandidateSet};
use kgalign::harness::{align_batch, build_gateway, compute_candidates, load_pair, RunConfig};
use kgalign::kg_store::snapshot::GraphPair;
use kgalign::kg_store::{read_side, write_side, EntityId, KnowledgeGraph, SideFiles};
use kgalign::llm_gateway::{parse_choice, ChoiceOutcome};
use kgalign::prompt_forge::{
    build_prompt, option_label_for, PromptKind, PromptOption, PromptTemplate, MAX_OPTIONS,
};
use kgalign::triple_selector::TripleSelector;
use kgalign::vote_engine::{sample_permutations, tally};

use common::*;

fn attr_facts(g: &KnowledgeGraph) -> Vec<(EntityId, String, String)> {
    g.att_triples()
        .iter()
        .map(|t| {
            (
                t.head,
                g.attribute_uri(t.attribute).unwrap().to_string(),
                t.value.clone(),
            )
        })
        .collect()
}

fn rel_facts(g: &KnowledgeGraph) -> Vec<(EntityId, String, EntityId)> {
    g.rel_triples()
        .iter()
        .map(|t| {
            (
                t.head,
                g.relation_uri(t.relation).unwrap().to_string(),
                t.tail,
            )
        })
        .collect()
}

fn options(n: usize) -> Vec<PromptOption> {
    (0..n)
        .map(|i| PromptOption {
            label: option_label_for(i).unwrap(),
            target: EntityId(i as u32),
            name: format!("Name {i}"),
            block: String::new(),
        })
        .collect()
}

fn factorial(m: usize) -> usize {
    (1..=m).product()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_files_round_trip(seed in any::<u64>()) {
        let (src, _) = random_pair(seed, 30);
        let dir = tempfile::tempdir().unwrap();
        let files = SideFiles::in_dir(dir.path(), 1);
        write_side(&src, &files).unwrap();
        let (back, skipped) = read_side(&files).unwrap();
        prop_assert_eq!(skipped, 0);
        prop_assert_eq!(back.entities(), src.entities());
        prop_assert_eq!(back.relations(), src.relations());
        // Attribute files only list triples, so unused attributes vanish.
        let used: BTreeSet<&str> = src.att_triples().iter().map(|t| src.attribute_uri(t.attribute).unwrap()).collect();
        prop_assert_eq!(back.attributes().len(), used.len());
        prop_assert_eq!(rel_facts(&back), rel_facts(&src));
        prop_assert_eq!(attr_facts(&back), attr_facts(&src));
    }

    #[test]
    fn parsed_choice_is_in_range(raw in ".{0,40}", n in 1usize..40) {
        let opts = options(n);
        if let ChoiceOutcome::Chosen(i) = parse_choice(&raw, &opts).outcome {
            prop_assert!(i < n);
        }
    }

    #[test]
    fn every_label_parses_back(n in 1usize..=MAX_OPTIONS, pick in any::<prop::sample::Index>()) {
        let i = pick.index(n);
        let opts = options(n);
        let raw = format!("Answer: {}", opts[i].label);
        prop_assert_eq!(parse_choice(&raw, &opts).outcome, ChoiceOutcome::Chosen(i));
    }

    #[test]
    fn permutations_are_distinct_and_complete(m in 1usize..9, n in 1usize..30, seed in any::<u64>(), id_first in any::<bool>()) {
        let sample = sample_permutations(m, n, seed, id_first).unwrap();
        let expected = n.min(factorial(m));
        prop_assert_eq!(sample.permutations.len(), expected);
        prop_assert_eq!(sample.capped, n > factorial(m));
        let identity: Vec<usize> = (0..m).collect();
        if id_first {
            prop_assert_eq!(&sample.permutations[0], &identity);
        }
        let distinct: HashSet<&Vec<usize>> = sample.permutations.iter().collect();
        prop_assert_eq!(distinct.len(), expected);
        for p in &sample.permutations {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            prop_assert_eq!(&sorted, &identity);
        }
        prop_assert_eq!(sample, sample_permutations(m, n, seed, id_first).unwrap());
    }

    #[test]
    fn tally_matches_brute_force(choices in prop::collection::vec(0u32..6, 0..12), threshold in 0usize..7) {
        let ids: Vec<EntityId> = choices.iter().map(|&c| EntityId(c)).collect();
        let t = tally(&ids, threshold);
        prop_assert_eq!(t.decision.winner(), brute_tally(&ids, threshold));
        if let Some(w) = t.decision.winner() {
            prop_assert!(t.counts[&w] >= threshold);
            prop_assert!(t.counts.iter().all(|(c, &v)| *c == w || v < t.counts[&w]));
        }
        let mut rev = ids.clone();
        rev.reverse();
        prop_assert_eq!(tally(&rev, threshold), t);
    }

    #[test]
    fn top_k_prefixes_nest(seed in any::<u64>(), k in 1usize..20) {
        let src = random_matrix(seed, 0, 5, 8);
        let tgt = random_matrix(seed ^ 1, 100, 25, 8);
        let small = top_k(EntityId(0), k, &src, &tgt).unwrap();
        let large = top_k(EntityId(0), k + 1, &src, &tgt).unwrap();
        prop_assert_eq!(&small.candidates[..], &large.candidates[..k]);
        prop_assert!(small.candidates.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn identifiability_is_product_in_unit_range(seed in any::<u64>()) {
        let (src, tgt) = random_pair(seed, 30);
        let selector = TripleSelector::new(&src, &tgt);
        let candidates: Vec<EntityId> = tgt.entities().keys().copied().take(5).collect();
        for uri in tgt.attributes().values() {
            let ident = selector.identifiability_att(uri, &candidates).unwrap();
            let freq = selector.frequency_att(uri, &candidates).unwrap();
            let fun = selector.function_degree_att(uri).map(|f| f * freq).unwrap_or_default();
            prop_assert_eq!(ident, fun);
            prop_assert!(ident <= Q::from_integer(1));
        }
    }
}

// Label tracking: option i of a prompt built from a permutation always
// names the candidate the permutation put there.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn option_targets_follow_permutation(seed in any::<u64>(), m in 1usize..8) {
        let (src, tgt) = random_pair(seed, 40);
        let candidates: Vec<EntityId> = tgt.entities().keys().copied().take(m).collect();
        let m = candidates.len();
        let source = *src.entities().keys().next().unwrap();
        for perm in sample_permutations(m, 4, seed, false).unwrap().permutations {
            let order: Vec<EntityId> = perm.iter().map(|&i| candidates[i]).collect();
            let p = build_prompt(PromptKind::KnowledgeDriven, source, &order, &src, &tgt, None, &PromptTemplate::default()).unwrap();
            let mut inverse = vec![0; m];
            for (pos, &i) in perm.iter().enumerate() {
                inverse[i] = pos;
            }
            for (i, c) in candidates.iter().enumerate() {
                prop_assert_eq!(p.options[inverse[i]].target, *c);
            }
        }
    }
}

struct World {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    pair: GraphPair,
    sets: Vec<CandidateSet>,
}

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        write_fixture(&data, 30, 21);
        let cfg = fixture_config(&data, &dir.path().join("out"), 0);
        let paths = cfg.dataset_paths().unwrap();
        let (pair, _) = load_pair(&paths).unwrap();
        let sources: Vec<EntityId> = pair.gold.keys().copied().collect();
        let sets = compute_candidates(&paths, &pair, &sources, 6).unwrap();
        World {
            _dir: dir,
            cfg,
            pair,
            sets,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pipeline_stages_are_consistent(seed in any::<u64>(), w0 in 1.0f64..5.0, gold in 0.5f64..4.0, votes in 1usize..6) {
        let w = world();
        let run = |fallback: FallbackPolicy| {
            let mut cfg = w.cfg.clone();
            cfg.seed = seed;
            cfg.gateway.oracle = "biased".into();
            cfg.gateway.bias_weights = vec![w0, 1.0];
            cfg.gateway.bias_gold_weight = gold;
            cfg.pipeline.votes = votes;
            cfg.pipeline.k_candidates = 6;
            cfg.pipeline.fallback = fallback;
            let gateway = build_gateway(&cfg, &w.pair.gold, false).unwrap();
            align_batch(&cfg, &w.pair, &w.sets, &gateway, &cfg.template().unwrap()).unwrap()
        };
        let top = run(FallbackPolicy::TopSimilarity);
        let none = run(FallbackPolicy::None);

        for (d, set) in top.decisions().zip(&w.sets) {
            let winners: Vec<bool> = d.vote_outcomes.iter().map(|v| v.decision.winner().is_some()).collect();
            prop_assert!(d.vote_outcomes.len() + d.skipped.len() <= 2);
            prop_assert!(winners.iter().rev().skip(1).all(|&x| !x), "only the last vote may elect");
            match d.stage {
                Stage::AttributeStage => {
                    prop_assert_eq!(d.vote_outcomes.len(), 1);
                    prop_assert_eq!(d.vote_outcomes[0].kind, PromptKind::AttributeAware);
                    prop_assert_eq!(d.predicted, d.vote_outcomes[0].decision.winner());
                }
                Stage::RelationStage => {
                    let last = d.vote_outcomes.last().unwrap();
                    prop_assert_eq!(last.kind, PromptKind::RelationAware);
                    prop_assert_eq!(d.predicted, last.decision.winner());
                }
                Stage::Fallback => {
                    prop_assert!(winners.iter().all(|&x| !x));
                    prop_assert_eq!(d.predicted, Some(set.candidates[0].target));
                }
                Stage::Unresolved => prop_assert!(false, "top-similarity fallback never leaves a source unresolved"),
            }
            let offered: BTreeSet<EntityId> = d.candidates.iter().copied().collect();
            prop_assert!(offered.contains(&d.predicted.unwrap()));
        }

        for (a, b) in top.decisions().zip(none.decisions()) {
            match b.stage {
                Stage::Unresolved => prop_assert_eq!(a.stage, Stage::Fallback),
                Stage::Fallback => prop_assert!(false, "no fallback under the none policy"),
                _ => prop_assert_eq!(a, b),
            }
        }
        let hits_top = top.hits_at_1(&w.pair.gold).unwrap();
        let hits_none = none.hits_at_1(&w.pair.gold).unwrap();
        prop_assert!(hits_top.correct >= hits_none.correct);
        prop_assert_eq!(hits_none.answered + (hits_top.answered - hits_none.answered), hits_top.evaluated);
    }
}
