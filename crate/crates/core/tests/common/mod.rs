#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use scenecause_core::extract::{CausalEdge, CausalGraph, TemplateKind, TemplateMatch};
use scenecause_core::scene::{parse_scene_graph, scene_from_value, EntityId, HumanLexicon, SceneGraph};

pub const SHELF_SCENE: &str = r#"{"image_id": 2417,
    "objects": [
        {"object_id": 1, "names": ["wall"]},
        {"object_id": 2, "names": ["shelf"]},
        {"object_id": 3, "names": ["books"]},
        {"object_id": 4, "names": ["window"]}],
    "relationships": [
        {"subject_id": 2, "predicate": "fixed to", "object_id": 1},
        {"subject_id": 3, "predicate": "on", "object_id": 2},
        {"subject_id": 3, "predicate": "leaning on", "object_id": 1},
        {"subject_id": 4, "predicate": "next to", "object_id": 2}],
    "regions": [
        {"phrase": "books are on the shelf", "object_ids": [3, 2]},
        {"phrase": "a shelf fixed to the wall", "object_ids": [2, 1]},
        {"phrase": "a window beside the shelf"}]}"#;

pub fn shelf_scene() -> SceneGraph {
    parse_scene_graph(SHELF_SCENE, &HumanLexicon::default()).unwrap()
}

/// Object nouns with no word contained in another and none appearing in the
/// question templates.
const OBJECTS: &[&str] = &[
    "table", "lamp", "vase", "bottle", "plate", "bowl", "tray", "desk", "chair", "bench", "crate", "basket",
    "box", "pillow", "blanket", "mug", "kettle", "laptop", "monitor", "keyboard", "shovel", "candle", "clock",
    "mirror", "frame", "painting", "banner", "flag", "pole", "beam", "post", "rack", "hanger", "towel",
    "umbrella", "backpack", "suitcase", "helmet", "trolley", "kite", "balloon", "ladder", "barrel", "bucket",
    "pot", "pan", "spoon", "knife", "fork", "jar", "tile", "counter", "cabinet", "drawer", "curtain", "rug",
    "carpet", "sofa", "stool", "platform",
];
const HUMANS: &[&str] = &["woman", "boy", "girl", "child", "chef", "player", "skier", "rider"];
const SUPPORT_PREDICATES: &[&str] = &["on", "sitting on", "resting on", "standing on", "on top of", "mounted on"];
const HOLD_PREDICATES: &[&str] = &["holding", "carrying", "holds"];
const NON_CAUSAL: &[&str] = &["next to", "near", "behind", "beside", "in front of"];

/// Random scene in the ingestion shape. Entities are named from disjoint
/// pools; relations follow a random topological order so most are causal
/// and acyclic, with some noise.
pub fn synthetic_scene_value(rng: &mut ChaCha8Rng, image_id: u64) -> Value {
    let n = rng.random_range(3..=7);
    let extra = rng.random_range(0..=2);
    let mut names: Vec<&str> = OBJECTS.choose_multiple(rng, n + extra).copied().collect();
    if rng.random_bool(0.3) {
        names[0] = HUMANS.choose(rng).unwrap();
    }
    let objects: Vec<Value> = names
        .iter()
        .enumerate()
        .map(|(i, name)| json!({"object_id": i + 1, "names": [name]}))
        .collect();
    let mut relationships = Vec::new();
    let mut regions = Vec::new();
    // causal part over the first n entities; index order is the causal order
    for effect in 1..n {
        for cause in 0..effect {
            if !rng.random_bool(0.45) {
                continue;
            }
            let human_cause = HUMANS.contains(&names[cause]);
            let rel = if human_cause {
                json!({"subject_id": cause + 1, "predicate": HOLD_PREDICATES.choose(rng).unwrap(), "object_id": effect + 1})
            } else {
                json!({"subject_id": effect + 1, "predicate": SUPPORT_PREDICATES.choose(rng).unwrap(), "object_id": cause + 1})
            };
            relationships.push(rel);
            if rng.random_bool(0.5) {
                regions.push(json!({"phrase": format!("{} with the {}", names[effect], names[cause]), "object_ids": [effect + 1, cause + 1]}));
            }
        }
    }
    for _ in 0..rng.random_range(0..=2) {
        let a = rng.random_range(0..names.len());
        let b = rng.random_range(0..names.len());
        if a != b {
            relationships.push(json!({"subject_id": a + 1, "predicate": NON_CAUSAL.choose(rng).unwrap(), "object_id": b + 1}));
        }
    }
    relationships.shuffle(rng);
    json!({"image_id": image_id, "objects": objects, "relationships": relationships, "regions": regions})
}

pub fn synthetic_scenes(seed: u64, count: usize) -> Vec<SceneGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let humans = HumanLexicon::default();
    (0..count)
        .map(|i| scene_from_value(&synthetic_scene_value(&mut rng, i as u64 + 1), &humans).unwrap())
        .collect()
}

/// Random DAG over nodes "n0".."n{k-1}" with a shuffled topological order.
pub fn random_dag(rng: &mut ChaCha8Rng, max_nodes: usize, density: f64) -> CausalGraph {
    let k = rng.random_range(1..=max_nodes);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if rng.random_bool(density) {
                edges.push(CausalEdge::new(format!("n{}", order[i]), format!("n{}", order[j])));
            }
        }
    }
    CausalGraph::from_edges(edges)
}

/// Canonical graph for one template kind with nodes named after roles.
pub fn template_graph(kind: TemplateKind) -> CausalGraph {
    let pairs: &[(&str, &str)] = match kind {
        TemplateKind::Direct => &[("a", "b")],
        TemplateKind::Confounding => &[("w", "m"), ("w", "y"), ("m", "y")],
        TemplateKind::Collision => &[("a", "y"), ("b", "y")],
        TemplateKind::Chain => &[("a", "b"), ("b", "c")],
    };
    CausalGraph::from_edges(pairs.iter().map(|(c, e)| CausalEdge::new(*c, *e)))
}

/// Brute-force template enumeration: every ordered tuple of distinct nodes
/// whose induced edge set equals the template's. Collider parents are
/// unordered, and Direct is kept only for edges outside every larger match.
pub fn naive_matches(graph: &CausalGraph) -> Vec<(TemplateKind, Vec<EntityId>)> {
    let nodes: Vec<&EntityId> = graph.nodes.iter().collect();
    let edge = |a: &EntityId, b: &EntityId| graph.edges.iter().any(|e| &e.cause == a && &e.effect == b);
    let induced = |tuple: &[&EntityId]| -> BTreeSet<(usize, usize)> {
        let mut s = BTreeSet::new();
        for i in 0..tuple.len() {
            for j in 0..tuple.len() {
                if i != j && edge(tuple[i], tuple[j]) {
                    s.insert((i, j));
                }
            }
        }
        s
    };
    let mut found = Vec::new();
    let mut covered: BTreeSet<(EntityId, EntityId)> = BTreeSet::new();
    for kind in [TemplateKind::Confounding, TemplateKind::Collision, TemplateKind::Chain] {
        let want: BTreeSet<(usize, usize)> = match kind {
            TemplateKind::Confounding => [(0, 1), (0, 2), (1, 2)].into(),
            TemplateKind::Collision => [(0, 2), (1, 2)].into(),
            TemplateKind::Chain => [(0, 1), (1, 2)].into(),
            TemplateKind::Direct => unreachable!(),
        };
        for &x in &nodes {
            for &y in &nodes {
                for &z in &nodes {
                    if x == y || y == z || x == z {
                        continue;
                    }
                    if kind == TemplateKind::Collision && x > y {
                        continue;
                    }
                    let t = [x, y, z];
                    if induced(&t) == want {
                        for &(i, j) in &want {
                            covered.insert((t[i].clone(), t[j].clone()));
                        }
                        found.push((kind, vec![x.clone(), y.clone(), z.clone()]));
                    }
                }
            }
        }
    }
    for e in &graph.edges {
        if !covered.contains(&(e.cause.clone(), e.effect.clone())) {
            found.push((TemplateKind::Direct, vec![e.cause.clone(), e.effect.clone()]));
        }
    }
    found.sort();
    found.dedup();
    found
}

pub fn as_tuples(matches: &[TemplateMatch]) -> Vec<(TemplateKind, Vec<EntityId>)> {
    let mut v: Vec<_> = matches
        .iter()
        .map(|m| (m.kind, m.ordered_nodes().into_iter().cloned().collect::<Vec<_>>()))
        .collect();
    v.sort();
    v
}
