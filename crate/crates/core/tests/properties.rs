mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scenecause_core::extract::{build_causal_edges, match_templates, PredicateLexicon, TemplateKind};
use scenecause_core::generate::{leaks, split_names, QuestionGenerator};
use scenecause_core::oracle::{answer_task, CausalQuery, Intervention, NodeState, Polarity, Scm, TaskKind};
use scenecause_core::quality::{hdd_exact, mattr, mtld};
use scenecause_core::record::Gold;
use scenecause_core::scene::HumanLexicon;

fn tokens() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..12, 1..120)
}

proptest! {
    #[test]
    fn disrupting_more_never_sustains_more(seed in any::<u64>(), mask_a in any::<u8>(), mask_b in any::<u8>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_dag(&mut rng, 8, 0.4);
        let scm = Scm::new(&g.nodes, &g.edges).unwrap();
        let nodes: Vec<_> = g.nodes.iter().cloned().collect();
        let pick = |mask: u8| -> Intervention {
            nodes.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, n)| (n.clone(), NodeState::Disrupted)).collect()
        };
        let small = pick(mask_a & mask_b);
        let large = pick(mask_a | mask_b);
        let s = scm.evaluate(&small).unwrap();
        let l = scm.evaluate(&large).unwrap();
        for n in &nodes {
            prop_assert!(!(s[n] == NodeState::Disrupted && l[n] == NodeState::Sustained), "{n} recovered");
        }
    }

    #[test]
    fn hdd_ignores_order(mut toks in tokens(), seed in any::<u64>()) {
        let sample = toks.len().min(42);
        let before = hdd_exact(&toks, sample).unwrap();
        use rand::seq::SliceRandom;
        toks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(before, hdd_exact(&toks, sample).unwrap());
    }

    #[test]
    fn metric_bounds(toks in tokens(), window in 1usize..60) {
        let m = mattr(&toks, window).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
        let h = scenecause_core::quality::hdd(&toks, toks.len().min(42)).unwrap();
        prop_assert!(h > 0.0 && h <= 1.0 + 1e-12);
        prop_assert!(mtld(&toks, 0.72).unwrap() >= 1.0);
    }

    #[test]
    fn extraction_is_acyclic_and_records_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let value = common::synthetic_scene_value(&mut rng, 1);
        let scene = scenecause_core::scene::scene_from_value(&value, &HumanLexicon::default()).unwrap();
        let graph = build_causal_edges(&scene, &PredicateLexicon::default()).graph;
        prop_assert!(Scm::new(&graph.nodes, &graph.edges).is_ok());
        let out = QuestionGenerator::default().generate_scene(&scene, &PredicateLexicon::default(), seed);
        for r in &out.records {
            prop_assert!(r.validate().is_ok(), "{:?}", r.validate());
        }
    }
}

#[test]
fn negation_flips_every_binary_answer() {
    for kind in TemplateKind::ALL {
        let m = match_templates(&common::template_graph(kind)).unwrap().remove(0);
        for &task in TaskKind::for_kind(kind).iter().filter(|t| t.is_binary()) {
            for focus in task.foci(kind) {
                let ask = |p| {
                    let q = CausalQuery::new(task, m.clone(), focus.clone(), Some(p)).unwrap();
                    answer_task(&q).unwrap().truth().unwrap()
                };
                assert_ne!(ask(Polarity::Affirmative), ask(Polarity::Negated), "{task} {focus:?}");
            }
        }
    }
}

#[test]
fn five_hundred_generations_hold_invariants() {
    let scenes = common::synthetic_scenes(7, 500);
    let gen = QuestionGenerator::default();
    let mut seen: BTreeMap<TaskKind, usize> = BTreeMap::new();
    for (i, scene) in scenes.iter().enumerate() {
        let out = gen.generate_scene(scene, &PredicateLexicon::default(), i as u64);
        let again = gen.generate_scene(scene, &PredicateLexicon::default(), i as u64);
        assert_eq!(out.records, again.records);
        for r in &out.records {
            r.validate().unwrap();
            *seen.entry(r.task).or_default() += 1;
            if let Gold::Index(_) = r.gold {
                let mut texts: Vec<String> = r.options.iter().map(|o| o.text.to_lowercase()).collect();
                texts.sort();
                texts.dedup();
                assert_eq!(texts.len(), 4, "{}", r.id);
                for name in split_names(r.gold_text()) {
                    assert!(!leaks(&r.question, &name), "{}", r.id);
                }
            }
        }
    }
    assert_eq!(seen.len(), 12, "{seen:?}");
}
