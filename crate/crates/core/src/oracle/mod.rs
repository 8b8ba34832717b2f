//! Deterministic boolean structural causal model and the twelve task queries.
//!
//! Every node is either `Sustained` or `Disrupted`. Roots are Sustained unless
//! intervened on; any other node is Sustained iff all of its parents are
//! (conjunctive structural equation). `do(X = s)` pins `X` and ignores its
//! incoming edges.

mod brute;

pub use brute::{brute_force_answer, MAX_BRUTE_FORCE_NODES};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{CausalEdge, Role, TemplateKind, TemplateMatch};
use crate::scene::EntityId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("intervention target {0} is not part of the graph")]
    UnknownTarget(EntityId),
    #[error("task {task} is not defined for {kind} graphs")]
    IncompatibleTask { task: TaskKind, kind: TemplateKind },
    #[error("focus {focus:?} is not valid for {task} on {kind} graphs")]
    InvalidFocus { task: TaskKind, kind: TemplateKind, focus: Vec<Role> },
    #[error("polarity must be set exactly for binary tasks ({task})")]
    PolarityMismatch { task: TaskKind },
    #[error("graph contains a cycle")]
    CyclicGraph,
    #[error("brute force limited to {max} nodes, graph has {nodes}")]
    TooLarge { nodes: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rung {
    Discovery,
    Association,
    Intervention,
    Counterfactual,
}

impl Rung {
    pub const ALL: [Rung; 4] = [Rung::Discovery, Rung::Association, Rung::Intervention, Rung::Counterfactual];

    pub fn as_str(self) -> &'static str {
        match self {
            Rung::Discovery => "discovery",
            Rung::Association => "association",
            Rung::Intervention => "intervention",
            Rung::Counterfactual => "counterfactual",
        }
    }

    pub fn tasks(self) -> impl Iterator<Item = TaskKind> {
        TaskKind::ALL.into_iter().filter(move |t| t.rung() == self)
    }
}

impl fmt::Display for Rung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Answer arity of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerFormat {
    Mcq,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    /// Causality identification.
    #[serde(rename = "CaI")]
    Cai,
    /// Causal attribution.
    #[serde(rename = "CA")]
    Ca,
    /// Abstract reasoning.
    #[serde(rename = "AR")]
    Ar,
    /// Collider bias.
    #[serde(rename = "CB")]
    Cb,
    /// Confounder identification.
    #[serde(rename = "CoI")]
    Coi,
    /// Backdoor adjustment set.
    #[serde(rename = "BAS")]
    Bas,
    /// Controlled direct effect.
    #[serde(rename = "CDE")]
    Cde,
    /// Counterfactual reasoning.
    #[serde(rename = "CR")]
    Cr,
    /// Natural direct effect.
    #[serde(rename = "NDE")]
    Nde,
    /// Natural indirect effect.
    #[serde(rename = "NIE")]
    Nie,
    /// Sufficient cause.
    #[serde(rename = "SC")]
    Sc,
    /// Necessary cause.
    #[serde(rename = "NC")]
    Nc,
}

impl TaskKind {
    pub const ALL: [TaskKind; 12] = [
        TaskKind::Cai,
        TaskKind::Ca,
        TaskKind::Ar,
        TaskKind::Cb,
        TaskKind::Coi,
        TaskKind::Bas,
        TaskKind::Cde,
        TaskKind::Cr,
        TaskKind::Nde,
        TaskKind::Nie,
        TaskKind::Sc,
        TaskKind::Nc,
    ];

    pub fn rung(self) -> Rung {
        use TaskKind::*;
        match self {
            Cai | Ca | Ar => Rung::Discovery,
            Cb => Rung::Association,
            Coi | Bas | Cde => Rung::Intervention,
            Cr | Nde | Nie | Sc | Nc => Rung::Counterfactual,
        }
    }

    pub fn format(self) -> AnswerFormat {
        use TaskKind::*;
        match self {
            Cai | Ca | Ar | Cb | Coi | Bas => AnswerFormat::Mcq,
            Cde | Cr | Nde | Nie | Sc | Nc => AnswerFormat::Binary,
        }
    }

    pub fn is_binary(self) -> bool {
        self.format() == AnswerFormat::Binary
    }

    pub fn code(self) -> &'static str {
        use TaskKind::*;
        match self {
            Cai => "CaI",
            Ca => "CA",
            Ar => "AR",
            Cb => "CB",
            Coi => "CoI",
            Bas => "BAS",
            Cde => "CDE",
            Cr => "CR",
            Nde => "NDE",
            Nie => "NIE",
            Sc => "SC",
            Nc => "NC",
        }
    }

    pub fn long_name(self) -> &'static str {
        use TaskKind::*;
        match self {
            Cai => "causality identification",
            Ca => "causal attribution",
            Ar => "abstract reasoning",
            Cb => "collider bias",
            Coi => "confounder identification",
            Bas => "backdoor adjustment set",
            Cde => "controlled direct effect",
            Cr => "counterfactual reasoning",
            Nde => "natural direct effect",
            Nie => "natural indirect effect",
            Sc => "sufficient cause",
            Nc => "necessary cause",
        }
    }

    /// Tasks answerable on each graph kind, in a fixed order.
    pub fn for_kind(kind: TemplateKind) -> &'static [TaskKind] {
        use TaskKind::*;
        match kind {
            TemplateKind::Direct => &[Cai, Cr],
            TemplateKind::Confounding => &[Coi, Bas, Cde, Nde, Nie, Sc],
            TemplateKind::Collision => &[Cb, Nc],
            TemplateKind::Chain => &[Ca, Ar, Cde, Nde, Nie],
        }
    }

    pub fn compatible_with(self, kind: TemplateKind) -> bool {
        TaskKind::for_kind(kind).contains(&self)
    }

    /// Admissible focus role tuples for this task on `kind`; empty when the
    /// task is not defined there.
    ///
    /// Tuple meaning by task: CaI/CA/CoI/CB `[target]`; AR `[source]`;
    /// BAS `[treatment, outcome]`; CDE `[held, varied, outcome]`;
    /// NDE/NIE `[treatment, mediator, outcome]`; CR/SC `[cause, outcome]`;
    /// NC `[parent, collider]`.
    pub fn foci(self, kind: TemplateKind) -> Vec<Vec<Role>> {
        use Role::*;
        use TaskKind::*;
        use TemplateKind as K;
        let foci: &[&[Role]] = match (self, kind) {
            (Cai, K::Direct) => &[&[B]],
            (Cr, K::Direct) => &[&[A, B]],
            (Coi, K::Confounding) => &[&[Y]],
            (Bas, K::Confounding) => &[&[M, Y]],
            (Cde | Nde | Nie, K::Confounding) => &[&[W, M, Y]],
            (Sc, K::Confounding) => &[&[W, Y], &[M, Y]],
            (Cb, K::Collision) => &[&[Y]],
            (Nc, K::Collision) => &[&[A, Y], &[B, Y]],
            (Ca, K::Chain) => &[&[C]],
            (Ar, K::Chain) => &[&[A]],
            (Cde | Nde | Nie, K::Chain) => &[&[A, B, C]],
            _ => &[],
        };
        foci.iter().map(|f| f.to_vec()).collect()
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeState {
    Sustained,
    Disrupted,
}

impl NodeState {
    pub fn is_disrupted(self) -> bool {
        self == NodeState::Disrupted
    }
}

pub type StateAssignment = BTreeMap<EntityId, NodeState>;

/// Forced states; incoming edges of targets are severed.
pub type Intervention = BTreeMap<EntityId, NodeState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Affirmative,
    Negated,
}

impl Polarity {
    pub fn apply(self, truth: bool) -> bool {
        match self {
            Polarity::Affirmative => truth,
            Polarity::Negated => !truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalQuery {
    pub task: TaskKind,
    pub matched: TemplateMatch,
    pub focus: Vec<Role>,
    pub polarity: Option<Polarity>,
}

impl CausalQuery {
    pub fn new(
        task: TaskKind,
        matched: TemplateMatch,
        focus: Vec<Role>,
        polarity: Option<Polarity>,
    ) -> Result<Self, OracleError> {
        let kind = matched.kind;
        if !task.compatible_with(kind) {
            return Err(OracleError::IncompatibleTask { task, kind });
        }
        if !task.foci(kind).contains(&focus) {
            return Err(OracleError::InvalidFocus { task, kind, focus });
        }
        if task.is_binary() != polarity.is_some() {
            return Err(OracleError::PolarityMismatch { task });
        }
        Ok(CausalQuery { task, matched, focus, polarity })
    }

    pub fn focus_node(&self, i: usize) -> &EntityId {
        self.matched.node(self.focus[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AnswerValue {
    Entities(BTreeSet<EntityId>),
    Truth(bool),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalAnswer {
    pub value: AnswerValue,
    /// Edges the answer was derived along.
    pub rationale: Vec<CausalEdge>,
}

impl CausalAnswer {
    pub fn entities(&self) -> Option<&BTreeSet<EntityId>> {
        match &self.value {
            AnswerValue::Entities(s) => Some(s),
            AnswerValue::Truth(_) => None,
        }
    }

    pub fn truth(&self) -> Option<bool> {
        match self.value {
            AnswerValue::Truth(t) => Some(t),
            AnswerValue::Entities(_) => None,
        }
    }
}

/// Conjunctive boolean SCM over an arbitrary DAG.
#[derive(Debug, Clone)]
pub struct Scm {
    ids: Vec<EntityId>,
    parents: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl Scm {
    pub fn new<'a>(
        nodes: impl IntoIterator<Item = &'a EntityId>,
        edges: &[CausalEdge],
    ) -> Result<Self, OracleError> {
        let mut ids: Vec<EntityId> = nodes.into_iter().cloned().collect();
        for e in edges {
            for id in [&e.cause, &e.effect] {
                if !ids.contains(id) {
                    ids.push(id.clone());
                }
            }
        }
        let pos = |id: &EntityId| ids.iter().position(|x| x == id).expect("registered");
        let mut parents = vec![Vec::new(); ids.len()];
        let mut indegree = vec![0usize; ids.len()];
        for e in edges {
            let (c, x) = (pos(&e.cause), pos(&e.effect));
            if !parents[x].contains(&c) {
                parents[x].push(c);
                indegree[x] += 1;
            }
        }
        let mut order = Vec::with_capacity(ids.len());
        let mut ready: VecDeque<usize> = (0..ids.len()).filter(|&i| indegree[i] == 0).collect();
        while let Some(n) = ready.pop_front() {
            order.push(n);
            for (x, ps) in parents.iter().enumerate() {
                if ps.contains(&n) {
                    indegree[x] -= 1;
                    if indegree[x] == 0 {
                        ready.push_back(x);
                    }
                }
            }
        }
        if order.len() != ids.len() {
            return Err(OracleError::CyclicGraph);
        }
        Ok(Scm { ids, parents, order })
    }

    pub fn from_match(m: &TemplateMatch) -> Self {
        Scm::new(m.bindings.values(), &m.edges).expect("template matches are acyclic")
    }

    /// Evaluates node states in topological order under `intervention`.
    pub fn evaluate(&self, intervention: &Intervention) -> Result<StateAssignment, OracleError> {
        if let Some(t) = intervention.keys().find(|t| !self.ids.contains(t)) {
            return Err(OracleError::UnknownTarget(t.clone()));
        }
        let mut state = vec![NodeState::Sustained; self.ids.len()];
        for &n in &self.order {
            state[n] = match intervention.get(&self.ids[n]) {
                Some(&forced) => forced,
                None if self.parents[n].iter().all(|&p| state[p] == NodeState::Sustained) => {
                    NodeState::Sustained
                }
                None => NodeState::Disrupted,
            };
        }
        Ok(self.ids.iter().cloned().zip(state).collect())
    }

    fn index(&self, id: &EntityId) -> usize {
        self.ids.iter().position(|x| x == id).expect("node of this model")
    }

    /// Shortest directed distance from each ancestor to `id`.
    fn ancestor_distances(&self, id: &EntityId) -> BTreeMap<EntityId, usize> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::from([(self.index(id), 0usize)]);
        let mut seen = BTreeSet::from([self.index(id)]);
        while let Some((n, d)) = queue.pop_front() {
            for &p in &self.parents[n] {
                if seen.insert(p) {
                    dist.insert(self.ids[p].clone(), d + 1);
                    queue.push_back((p, d + 1));
                }
            }
        }
        dist
    }

    fn descendant_distances(&self, id: &EntityId) -> BTreeMap<EntityId, usize> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::from([(self.index(id), 0usize)]);
        let mut seen = BTreeSet::from([self.index(id)]);
        while let Some((n, d)) = queue.pop_front() {
            for (c, ps) in self.parents.iter().enumerate() {
                if ps.contains(&n) && seen.insert(c) {
                    dist.insert(self.ids[c].clone(), d + 1);
                    queue.push_back((c, d + 1));
                }
            }
        }
        dist
    }
}

/// Node states of a matched template under an intervention.
pub fn propagate(matched: &TemplateMatch, intervention: &Intervention) -> Result<StateAssignment, OracleError> {
    Scm::from_match(matched).evaluate(intervention)
}

fn disrupt(ids: &[&EntityId]) -> Intervention {
    ids.iter().map(|&id| (id.clone(), NodeState::Disrupted)).collect()
}

/// Match edges lying on a directed path from any of `sources` to `target`.
fn edges_between(m: &TemplateMatch, sources: &[&EntityId], target: &EntityId) -> Vec<CausalEdge> {
    let scm = Scm::from_match(m);
    let upstream = scm.ancestor_distances(target);
    let mut on_path: BTreeSet<EntityId> = BTreeSet::from([target.clone()]);
    for &s in sources {
        if upstream.contains_key(s) {
            on_path.insert(s.clone());
            on_path.extend(scm.descendant_distances(s).into_keys().filter(|d| upstream.contains_key(d)));
        }
    }
    m.edges
        .iter()
        .filter(|e| on_path.contains(&e.cause) && on_path.contains(&e.effect))
        .cloned()
        .collect()
}

fn edges_into(m: &TemplateMatch, target: &EntityId) -> Vec<CausalEdge> {
    m.edges.iter().filter(|e| &e.effect == target).cloned().collect()
}

/// Answers a query with graph walks and forward propagation.
pub fn answer_task(query: &CausalQuery) -> Result<CausalAnswer, OracleError> {
    let m = &query.matched;
    let kind = m.kind;
    if !query.task.compatible_with(kind) {
        return Err(OracleError::IncompatibleTask { task: query.task, kind });
    }
    if !query.task.foci(kind).contains(&query.focus) {
        return Err(OracleError::InvalidFocus { task: query.task, kind, focus: query.focus.clone() });
    }
    let scm = Scm::from_match(m);
    let f = |i: usize| query.focus_node(i);
    let natural = scm.evaluate(&Intervention::new())?;

    let set = |ids: BTreeSet<EntityId>, rationale: Vec<CausalEdge>| CausalAnswer {
        value: AnswerValue::Entities(ids),
        rationale,
    };

    let (truth, rationale) = match query.task {
        TaskKind::Cai => {
            let ancestors: BTreeSet<_> = scm.ancestor_distances(f(0)).into_keys().collect();
            let sources: Vec<_> = ancestors.iter().collect();
            let rationale = edges_between(m, &sources, f(0));
            return Ok(set(ancestors, rationale));
        }
        TaskKind::Ca => {
            let indirect: BTreeSet<_> = scm
                .ancestor_distances(f(0))
                .into_iter()
                .filter(|(_, d)| *d >= 2)
                .map(|(id, _)| id)
                .collect();
            let sources: Vec<_> = indirect.iter().collect();
            let rationale = edges_between(m, &sources, f(0));
            return Ok(set(indirect, rationale));
        }
        TaskKind::Ar => {
            let indirect: BTreeSet<_> = scm
                .descendant_distances(f(0))
                .into_iter()
                .filter(|(_, d)| *d >= 2)
                .map(|(id, _)| id)
                .collect();
            let rationale = indirect.iter().flat_map(|t| edges_between(m, &[f(0)], t)).collect();
            return Ok(set(indirect, dedup(rationale)));
        }
        TaskKind::Cb => {
            let parents: BTreeSet<_> = m.edges.iter().filter(|e| &e.effect == f(0)).map(|e| e.cause.clone()).collect();
            return Ok(set(parents, edges_into(m, f(0))));
        }
        TaskKind::Coi => {
            let ids = BTreeSet::from([m.node(Role::M).clone(), m.node(Role::W).clone()]);
            return Ok(set(ids, m.edges.clone()));
        }
        TaskKind::Bas => {
            let ids = BTreeSet::from([m.node(Role::W).clone()]);
            let rationale = m.edges.iter().filter(|e| &e.cause == m.node(Role::W)).cloned().collect();
            return Ok(set(ids, rationale));
        }
        TaskKind::Cde => {
            let mut doing = disrupt(&[f(1)]);
            doing.insert(f(0).clone(), NodeState::Sustained);
            let world = scm.evaluate(&doing)?;
            (world[f(2)].is_disrupted(), edges_between(m, &[f(1)], f(2)))
        }
        TaskKind::Cr => {
            let world = scm.evaluate(&disrupt(&[f(0)]))?;
            (!world[f(1)].is_disrupted(), edges_between(m, &[f(0)], f(1)))
        }
        TaskKind::Nde => {
            let mut doing = disrupt(&[f(0)]);
            doing.insert(f(1).clone(), natural[f(1)]);
            let world = scm.evaluate(&doing)?;
            let direct = m.edges.iter().filter(|e| &e.cause == f(0) && &e.effect == f(2)).cloned().collect();
            (world[f(2)].is_disrupted(), direct)
        }
        TaskKind::Nie => {
            let mediator = scm.evaluate(&disrupt(&[f(0)]))?[f(1)];
            let doing = Intervention::from([(f(0).clone(), natural[f(0)]), (f(1).clone(), mediator)]);
            let world = scm.evaluate(&doing)?;
            (!world[f(2)].is_disrupted(), edges_between(m, &[f(0)], f(2)))
        }
        TaskKind::Sc => {
            let world = scm.evaluate(&disrupt(&[f(0)]))?;
            (world[f(1)].is_disrupted(), edges_between(m, &[f(0)], f(1)))
        }
        TaskKind::Nc => {
            // with an AND equation, any single parent failing explains the
            // collider failing; only a lone parent is necessary
            let parents = edges_into(m, f(1));
            let necessary = parents.len() == 1 && &parents[0].cause == f(0);
            (necessary, parents)
        }
    };
    let polarity = query.polarity.ok_or(OracleError::PolarityMismatch { task: query.task })?;
    Ok(CausalAnswer { value: AnswerValue::Truth(polarity.apply(truth)), rationale })
}

fn dedup(mut edges: Vec<CausalEdge>) -> Vec<CausalEdge> {
    let mut seen = BTreeSet::new();
    edges.retain(|e| seen.insert((e.cause.clone(), e.effect.clone())));
    edges
}
