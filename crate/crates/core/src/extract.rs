//! Causal edge extraction and template matching.
//!
//! A predicate lexicon orients each relation so that the supporter or holder
//! is the cause. The resulting DAG is then scanned for induced copies of the
//! four templates:
//!
//! ```text
//! Direct       A -> B
//! Confounding  W -> M, W -> Y, M -> Y
//! Collision    A -> Y, B -> Y          (no edge between A and B)
//! Chain        A -> B, B -> C          (no edge between A and C)
//! ```
//!
//! A Direct match is only reported for edges that are not part of any
//! three-node match, so a confounding triangle yields a single match.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Category, Entity, EntityId, SceneGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("causal graph contains a cycle")]
    CyclicGraph,
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Wording family of a causal predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VerbClass {
    #[default]
    Support,
    Hold,
}

impl VerbClass {
    /// Third-person verb used when verbalizing an edge.
    pub fn verb(self) -> &'static str {
        match self {
            VerbClass::Support => "supports",
            VerbClass::Hold => "holds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateRule {
    pub reversed: bool,
    pub class: VerbClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateLexicon {
    rules: HashMap<String, PredicateRule>,
}

#[derive(Deserialize)]
struct LexiconFile {
    #[serde(default)]
    predicate: Vec<LexiconEntry>,
}

#[derive(Deserialize)]
struct LexiconEntry {
    predicate: String,
    reversed: String,
    #[serde(default)]
    class: Option<VerbClass>,
}

const DEFAULT_PREDICATES: &str = include_str!("../data/predicates.toml");

impl Default for PredicateLexicon {
    fn default() -> Self {
        PredicateLexicon::parse(DEFAULT_PREDICATES).expect("bundled predicate lexicon is valid")
    }
}

impl PredicateLexicon {
    /// Parses `[[predicate]]` tables with `predicate`, `reversed = "yes"|"no"`
    /// and an optional `class`.
    pub fn parse(text: &str) -> Result<Self, ExtractError> {
        let file: LexiconFile =
            toml::from_str(text).map_err(|e| ExtractError::InvalidLexicon(e.to_string()))?;
        let mut rules = HashMap::new();
        for entry in file.predicate {
            let reversed = match entry.reversed.trim().to_lowercase().as_str() {
                "yes" => true,
                "no" => false,
                other => {
                    return Err(ExtractError::InvalidLexicon(format!(
                        "predicate {:?}: reversed must be yes or no, got {other:?}",
                        entry.predicate
                    )))
                }
            };
            let key = normalize_predicate(&entry.predicate);
            if key.is_empty() {
                return Err(ExtractError::InvalidLexicon("empty predicate".into()));
            }
            let class = entry.class.unwrap_or(VerbClass::Support);
            rules.insert(key, PredicateRule { reversed, class });
        }
        Ok(PredicateLexicon { rules })
    }

    pub fn load(path: &Path) -> Result<Self, ExtractError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExtractError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        PredicateLexicon::parse(&text)
    }

    pub fn rule(&self, predicate: &str) -> Option<&PredicateRule> {
        self.rules.get(&normalize_predicate(predicate))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

fn normalize_predicate(p: &str) -> String {
    p.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum RelationCategory {
    #[default]
    ObjectObject,
    HumanObject,
    HumanHuman,
}

pub fn relation_category(cause: &Entity, effect: &Entity) -> RelationCategory {
    match (cause.category, effect.category) {
        (Category::Human, Category::Human) => RelationCategory::HumanHuman,
        (Category::Human, _) | (_, Category::Human) => RelationCategory::HumanObject,
        _ => RelationCategory::ObjectObject,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CausalEdge {
    pub cause: EntityId,
    pub effect: EntityId,
    /// Predicate as written in the corpus.
    pub verb: String,
    pub class: VerbClass,
    pub relation_category: RelationCategory,
}

impl CausalEdge {
    /// Bare edge for graphs built outside a scene.
    pub fn new(cause: impl Into<String>, effect: impl Into<String>) -> Self {
        CausalEdge {
            cause: EntityId(cause.into()),
            effect: EntityId(effect.into()),
            verb: "supports".into(),
            class: VerbClass::Support,
            relation_category: RelationCategory::ObjectObject,
        }
    }

    /// "shelf supports books"
    pub fn verbalize(&self, scene: &SceneGraph) -> String {
        format!("{} {} {}", scene.name_of(&self.cause), self.class.verb(), scene.name_of(&self.effect))
    }
}

/// Directed graph over entity ids; at most one edge per ordered pair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CausalGraph {
    pub nodes: BTreeSet<EntityId>,
    pub edges: Vec<CausalEdge>,
}

impl CausalGraph {
    /// Nodes are the edge endpoints. Duplicate (cause, effect) pairs keep the
    /// first edge. No acyclicity check.
    pub fn from_edges(edges: impl IntoIterator<Item = CausalEdge>) -> Self {
        let mut graph = CausalGraph::default();
        for e in edges {
            if !graph.has_edge(&e.cause, &e.effect) {
                graph.nodes.insert(e.cause.clone());
                graph.nodes.insert(e.effect.clone());
                graph.edges.push(e);
            }
        }
        graph
    }

    pub fn has_edge(&self, cause: &EntityId, effect: &EntityId) -> bool {
        self.edges.iter().any(|e| &e.cause == cause && &e.effect == effect)
    }

    pub fn edge(&self, cause: &EntityId, effect: &EntityId) -> Option<&CausalEdge> {
        self.edges.iter().find(|e| &e.cause == cause && &e.effect == effect)
    }

    pub fn parents<'a>(&'a self, id: &'a EntityId) -> impl Iterator<Item = &'a EntityId> + 'a {
        self.edges.iter().filter(move |e| &e.effect == id).map(|e| &e.cause)
    }

    pub fn children<'a>(&'a self, id: &'a EntityId) -> impl Iterator<Item = &'a EntityId> + 'a {
        self.edges.iter().filter(move |e| &e.cause == id).map(|e| &e.effect)
    }

    fn reaches(&self, from: &EntityId, to: &EntityId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.children(n));
            }
        }
        false
    }

    /// Kahn's algorithm.
    pub fn is_acyclic(&self) -> bool {
        let mut indegree: BTreeMap<&EntityId, usize> = self.nodes.iter().map(|n| (n, 0)).collect();
        for e in &self.edges {
            *indegree.entry(&e.effect).or_default() += 1;
            indegree.entry(&e.cause).or_default();
        }
        let mut ready: Vec<&EntityId> =
            indegree.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut visited = 0;
        while let Some(n) = ready.pop() {
            visited += 1;
            for c in self.children(n) {
                let d = indegree.get_mut(c).expect("endpoint indexed");
                *d -= 1;
                if *d == 0 {
                    ready.push(c);
                }
            }
        }
        visited == indegree.len()
    }
}

/// Warning emitted while building a causal graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractionWarning {
    /// Adding this relation's edge would close a cycle; it was dropped.
    CycleDropped { relation: usize, cause: EntityId, effect: EntityId },
    /// A second relation between the same ordered pair; the first is kept.
    DuplicateEdge { relation: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub non_causal_skipped: usize,
    pub warnings: Vec<ExtractionWarning>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub graph: CausalGraph,
    pub report: ExtractionReport,
}

/// One edge per lexicon-matching relation, oriented cause -> effect. Edges that
/// would close a cycle are dropped in corpus order.
pub fn build_causal_edges(scene: &SceneGraph, lexicon: &PredicateLexicon) -> Extraction {
    let mut graph = CausalGraph::default();
    let mut report = ExtractionReport::default();
    for (i, rel) in scene.relations.iter().enumerate() {
        let Some(rule) = lexicon.rule(&rel.predicate) else {
            report.non_causal_skipped += 1;
            continue;
        };
        let (cause, effect) = if rule.reversed {
            (&rel.object, &rel.subject)
        } else {
            (&rel.subject, &rel.object)
        };
        if graph.has_edge(cause, effect) {
            report.warnings.push(ExtractionWarning::DuplicateEdge { relation: i });
            continue;
        }
        if graph.reaches(effect, cause) {
            log::warn!(
                "image {}: dropping edge {cause} -> {effect} from relation {i}: would create a cycle",
                scene.image_id
            );
            report.warnings.push(ExtractionWarning::CycleDropped {
                relation: i,
                cause: cause.clone(),
                effect: effect.clone(),
            });
            continue;
        }
        let category = match (scene.entity(cause), scene.entity(effect)) {
            (Some(c), Some(e)) => relation_category(c, e),
            _ => RelationCategory::ObjectObject,
        };
        graph.nodes.insert(cause.clone());
        graph.nodes.insert(effect.clone());
        graph.edges.push(CausalEdge {
            cause: cause.clone(),
            effect: effect.clone(),
            verb: rel.predicate.clone(),
            class: rule.class,
            relation_category: category,
        });
    }
    Extraction { graph, report }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Direct,
    Confounding,
    Collision,
    Chain,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] =
        [TemplateKind::Direct, TemplateKind::Confounding, TemplateKind::Collision, TemplateKind::Chain];

    pub fn roles(self) -> &'static [Role] {
        match self {
            TemplateKind::Direct => &[Role::A, Role::B],
            TemplateKind::Confounding => &[Role::W, Role::M, Role::Y],
            TemplateKind::Collision => &[Role::A, Role::B, Role::Y],
            TemplateKind::Chain => &[Role::A, Role::B, Role::C],
        }
    }

    /// Template edges as (cause role, effect role).
    pub fn edges(self) -> &'static [(Role, Role)] {
        match self {
            TemplateKind::Direct => &[(Role::A, Role::B)],
            TemplateKind::Confounding => &[(Role::W, Role::M), (Role::W, Role::Y), (Role::M, Role::Y)],
            TemplateKind::Collision => &[(Role::A, Role::Y), (Role::B, Role::Y)],
            TemplateKind::Chain => &[(Role::A, Role::B), (Role::B, Role::C)],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Direct => "direct",
            TemplateKind::Confounding => "confounding",
            TemplateKind::Collision => "collision",
            TemplateKind::Chain => "chain",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TemplateKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown graph kind {s:?}"))
    }
}

/// Template role names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
    C,
    W,
    M,
    Y,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemplateMatch {
    pub kind: TemplateKind,
    pub bindings: BTreeMap<Role, EntityId>,
    pub edges: Vec<CausalEdge>,
}

impl TemplateMatch {
    /// Binds `nodes` to the kind's roles in order and copies the template
    /// edges from `graph`. Returns `None` if any template edge is missing.
    pub fn bind(kind: TemplateKind, nodes: &[&EntityId], graph: &CausalGraph) -> Option<Self> {
        if nodes.len() != kind.roles().len() {
            return None;
        }
        let bindings: BTreeMap<Role, EntityId> =
            kind.roles().iter().copied().zip(nodes.iter().map(|&n| n.clone())).collect();
        let edges = kind
            .edges()
            .iter()
            .map(|(c, e)| graph.edge(&bindings[c], &bindings[e]).cloned())
            .collect::<Option<Vec<_>>>()?;
        Some(TemplateMatch { kind, bindings, edges })
    }

    pub fn node(&self, role: Role) -> &EntityId {
        &self.bindings[&role]
    }

    pub fn nodes(&self) -> BTreeSet<EntityId> {
        self.bindings.values().cloned().collect()
    }

    /// Bound ids in the kind's role order.
    pub fn ordered_nodes(&self) -> Vec<&EntityId> {
        self.kind.roles().iter().map(|r| &self.bindings[r]).collect()
    }

    fn sort_key(&self) -> (TemplateKind, Vec<&EntityId>) {
        (self.kind, self.ordered_nodes())
    }

    /// Stable textual key, e.g. `confounding(W=1,M=2,Y=3)`.
    pub fn key(&self) -> String {
        let binds: Vec<String> = self
            .kind
            .roles()
            .iter()
            .map(|r| format!("{r}={}", self.bindings[r]))
            .collect();
        format!("{}({})", self.kind, binds.join(","))
    }
}

/// Every induced template match in `graph`, sorted by kind then node ids.
pub fn match_templates(graph: &CausalGraph) -> Result<Vec<TemplateMatch>, ExtractError> {
    if !graph.is_acyclic() {
        return Err(ExtractError::CyclicGraph);
    }
    let mut parents: BTreeMap<&EntityId, BTreeSet<&EntityId>> = BTreeMap::new();
    let mut children: BTreeMap<&EntityId, BTreeSet<&EntityId>> = BTreeMap::new();
    for e in &graph.edges {
        children.entry(&e.cause).or_default().insert(&e.effect);
        parents.entry(&e.effect).or_default().insert(&e.cause);
    }
    let empty = BTreeSet::new();
    let kids = |n: &EntityId| children.get(n).unwrap_or(&empty);
    let adjacent = |a: &EntityId, b: &EntityId| kids(a).contains(b) || kids(b).contains(a);

    let mut found = Vec::new();
    // edges covered by some three-node match
    let mut covered: BTreeSet<(&EntityId, &EntityId)> = BTreeSet::new();

    for e in &graph.edges {
        let (w, m) = (&e.cause, &e.effect);
        // transitive triangles W->M->Y with W->Y
        for y in kids(m) {
            if kids(w).contains(y) {
                found.push(TemplateMatch::bind(TemplateKind::Confounding, &[w, m, y], graph));
                covered.extend([(w, m), (w, *y), (m, *y)]);
            }
        }
    }
    for (&mid, ps) in &parents {
        for &a in ps {
            // chains through `mid`
            for &c in kids(mid) {
                if !adjacent(a, c) {
                    found.push(TemplateMatch::bind(TemplateKind::Chain, &[a, mid, c], graph));
                    covered.extend([(a, mid), (mid, c)]);
                }
            }
            // colliders at `mid`, parents unordered
            for &b in ps.iter().filter(|&&b| b > a) {
                if !adjacent(a, b) {
                    found.push(TemplateMatch::bind(TemplateKind::Collision, &[a, b, mid], graph));
                    covered.extend([(a, mid), (b, mid)]);
                }
            }
        }
    }
    for e in &graph.edges {
        if !covered.contains(&(&e.cause, &e.effect)) {
            found.push(TemplateMatch::bind(TemplateKind::Direct, &[&e.cause, &e.effect], graph));
        }
    }

    let mut matches: Vec<TemplateMatch> =
        found.into_iter().map(|m| m.expect("matched edges exist in graph")).collect();
    matches.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    matches.dedup_by(|a, b| a.kind == b.kind && a.bindings == b.bindings);
    Ok(matches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{parse_scene_graph, HumanLexicon};

    fn graph(edges: &[(&str, &str)]) -> CausalGraph {
        CausalGraph::from_edges(edges.iter().map(|(a, b)| CausalEdge::new(*a, *b)))
    }

    fn scene(relations: &[(&str, &str, &str)]) -> SceneGraph {
        let mut names: Vec<&str> = relations.iter().flat_map(|(s, _, o)| [*s, *o]).collect();
        names.sort();
        names.dedup();
        let objects: Vec<String> = names
            .iter()
            .map(|n| format!(r#"{{"object_id": "{n}", "names": ["{n}"]}}"#))
            .collect();
        let rels: Vec<String> = relations
            .iter()
            .map(|(s, p, o)| format!(r#"{{"subject_id": "{s}", "predicate": "{p}", "object_id": "{o}"}}"#))
            .collect();
        let doc = format!(
            r#"{{"image_id": 1, "objects": [{}], "relationships": [{}]}}"#,
            objects.join(","),
            rels.join(",")
        );
        parse_scene_graph(&doc, &HumanLexicon::default()).unwrap()
    }

    #[test]
    fn orientation_follows_lexicon() {
        let lex = PredicateLexicon::default();
        let s = scene(&[("books", "on", "shelf"), ("shelf", "fixed to", "wall"), ("man", "looking at", "window")]);
        let ex = build_causal_edges(&s, &lex);
        let pairs: Vec<(&str, &str)> =
            ex.graph.edges.iter().map(|e| (e.cause.as_str(), e.effect.as_str())).collect();
        assert_eq!(pairs, [("shelf", "books"), ("wall", "shelf")]);
        assert_eq!(ex.report.non_causal_skipped, 1);
        assert_eq!(ex.graph.edges[0].verbalize(&s), "shelf supports books");
    }

    #[test]
    fn holder_is_cause() {
        let s = scene(&[("woman", "holding", "child"), ("stick", "holding", "balloon")]);
        let ex = build_causal_edges(&s, &PredicateLexicon::default());
        assert_eq!(ex.graph.edges[0].cause.as_str(), "woman");
        assert_eq!(ex.graph.edges[0].relation_category, RelationCategory::HumanHuman);
        assert_eq!(ex.graph.edges[1].relation_category, RelationCategory::ObjectObject);
        assert_eq!(ex.graph.edges[0].verbalize(&s), "woman holds child");
    }

    #[test]
    fn cycles_drop_later_edge() {
        let s = scene(&[("a", "on", "b"), ("b", "on", "c"), ("c", "on", "a")]);
        let ex = build_causal_edges(&s, &PredicateLexicon::default());
        assert_eq!(ex.graph.edges.len(), 2);
        assert!(ex.graph.is_acyclic());
        assert!(matches!(ex.report.warnings[..], [ExtractionWarning::CycleDropped { relation: 2, .. }]));
    }

    #[test]
    fn duplicate_pairs_keep_first() {
        let s = scene(&[("a", "on", "b"), ("a", "lying on", "b")]);
        let ex = build_causal_edges(&s, &PredicateLexicon::default());
        assert_eq!(ex.graph.edges.len(), 1);
        assert_eq!(ex.graph.edges[0].verb, "on");
    }

    #[test]
    fn lexicon_rejects_bad_flag() {
        let bad = "[[predicate]]\npredicate = \"on\"\nreversed = \"maybe\"\n";
        assert!(matches!(PredicateLexicon::parse(bad), Err(ExtractError::InvalidLexicon(_))));
        let ok = "[[predicate]]\npredicate = \"Perched  On\"\nreversed = \"yes\"\n";
        let lex = PredicateLexicon::parse(ok).unwrap();
        assert!(lex.rule("perched on").unwrap().reversed);
    }

    #[test]
    fn confounding_triangle_is_a_single_match() {
        let g = graph(&[("wall", "shelf"), ("wall", "books"), ("shelf", "books")]);
        let ms = match_templates(&g).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].kind, TemplateKind::Confounding);
        assert_eq!(ms[0].node(Role::W).as_str(), "wall");
        assert_eq!(ms[0].node(Role::M).as_str(), "shelf");
        assert_eq!(ms[0].node(Role::Y).as_str(), "books");
        assert_eq!(ms[0].edges.len(), 3);
    }

    #[test]
    fn single_edge_is_direct() {
        let ms = match_templates(&graph(&[("a", "b")])).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].kind, TemplateKind::Direct);
        assert_eq!(ms[0].key(), "direct(A=a,B=b)");
    }

    #[test]
    fn chain_and_collision() {
        let ms = match_templates(&graph(&[("a", "b"), ("b", "c")])).unwrap();
        assert_eq!(ms.iter().map(|m| m.key()).collect::<Vec<_>>(), ["chain(A=a,B=b,C=c)"]);
        let ms = match_templates(&graph(&[("stick", "balloon"), ("woman", "balloon")])).unwrap();
        assert_eq!(ms.iter().map(|m| m.key()).collect::<Vec<_>>(), ["collision(A=stick,B=woman,Y=balloon)"]);
    }

    #[test]
    fn fork_yields_two_directs() {
        let ms = match_templates(&graph(&[("w", "m"), ("w", "y")])).unwrap();
        assert!(ms.iter().all(|m| m.kind == TemplateKind::Direct));
        assert_eq!(ms.len(), 2);
    }

    #[test]
    fn cyclic_graph_rejected() {
        assert_eq!(match_templates(&graph(&[("a", "b"), ("b", "a")])), Err(ExtractError::CyclicGraph));
    }
}
