//! Exhaustive reference oracle.
//!
//! Enumerates every joint assignment of the matched nodes and keeps those
//! consistent with the structural equations, then answers each task from
//! the surviving worlds. Shares no code with the forward evaluator, so the
//! two can be checked against each other.

use std::collections::{BTreeMap, BTreeSet};

use super::{AnswerValue, CausalAnswer, CausalQuery, OracleError, TaskKind};
use crate::extract::TemplateMatch;
use crate::scene::EntityId;

pub const MAX_BRUTE_FORCE_NODES: usize = 12;

/// `true` = Sustained.
type World = Vec<bool>;

struct Model {
    ids: Vec<EntityId>,
    parents: Vec<Vec<usize>>,
}

impl Model {
    fn new(m: &TemplateMatch) -> Result<Self, OracleError> {
        let ids: Vec<EntityId> = m.nodes().into_iter().collect();
        if ids.len() > MAX_BRUTE_FORCE_NODES {
            return Err(OracleError::TooLarge { nodes: ids.len(), max: MAX_BRUTE_FORCE_NODES });
        }
        let at = |id: &EntityId| ids.binary_search(id).expect("edge endpoint is bound");
        let mut parents = vec![Vec::new(); ids.len()];
        for e in &m.edges {
            parents[at(&e.effect)].push(at(&e.cause));
        }
        Ok(Model { ids, parents })
    }

    fn at(&self, id: &EntityId) -> usize {
        self.ids.binary_search(id).expect("bound node")
    }

    fn worlds(&self) -> impl Iterator<Item = World> + '_ {
        let n = self.ids.len();
        (0u32..1 << n).map(move |bits| (0..n).map(|i| bits >> i & 1 == 1).collect())
    }

    /// Worlds satisfying the equations; `forced` nodes are pinned, roots
    /// either pinned Sustained or left free.
    fn consistent(&self, forced: &BTreeMap<usize, bool>, free_roots: bool) -> Vec<World> {
        self.worlds()
            .filter(|w| {
                (0..w.len()).all(|v| match forced.get(&v) {
                    Some(&s) => w[v] == s,
                    None if self.parents[v].is_empty() => free_roots || w[v],
                    None => w[v] == self.parents[v].iter().all(|&p| w[p]),
                })
            })
            .collect()
    }

    fn solve(&self, forced: &BTreeMap<usize, bool>) -> World {
        let mut ws = self.consistent(forced, false);
        assert_eq!(ws.len(), 1, "a deterministic model has exactly one world per intervention");
        ws.pop().unwrap()
    }

    /// Intervening on `x` changes `y`.
    fn causes(&self, x: usize, y: usize) -> bool {
        x != y && !self.solve(&BTreeMap::from([(x, false)]))[y]
    }

    /// Toggling `x` changes `y` with every other node held Sustained.
    fn direct(&self, x: usize, y: usize) -> bool {
        if x == y {
            return false;
        }
        let held = |sx: bool| -> BTreeMap<usize, bool> {
            (0..self.ids.len()).filter(|&v| v != y).map(|v| (v, if v == x { sx } else { true })).collect()
        };
        self.solve(&held(true))[y] != self.solve(&held(false))[y]
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        self.parents[b].contains(&a) || self.parents[a].contains(&b)
    }

    /// Simple undirected paths from `from` to `to`.
    fn paths(&self, from: usize, to: usize) -> Vec<Vec<usize>> {
        fn walk(m: &Model, path: &mut Vec<usize>, to: usize, out: &mut Vec<Vec<usize>>) {
            let last = *path.last().unwrap();
            if last == to {
                out.push(path.clone());
                return;
            }
            for next in 0..m.ids.len() {
                if !path.contains(&next) && m.adjacent(last, next) {
                    path.push(next);
                    walk(m, path, to, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut vec![from], to, &mut out);
        out
    }

    fn blocked(&self, path: &[usize], z: &BTreeSet<usize>) -> bool {
        path.windows(3).any(|w| {
            let (a, v, b) = (w[0], w[1], w[2]);
            let collider = self.parents[v].contains(&a) && self.parents[v].contains(&b);
            if collider {
                !z.contains(&v) && !z.iter().any(|&d| self.causes(v, d))
            } else {
                z.contains(&v)
            }
        })
    }

    fn backdoor_valid(&self, t: usize, o: usize, z: &BTreeSet<usize>) -> bool {
        if z.iter().any(|&v| v == t || v == o || self.causes(t, v)) {
            return false;
        }
        self.paths(t, o)
            .iter()
            .filter(|p| self.parents[t].contains(&p[1]))
            .all(|p| self.blocked(p, z))
    }

    fn set(&self, members: impl IntoIterator<Item = usize>) -> BTreeSet<EntityId> {
        members.into_iter().map(|i| self.ids[i].clone()).collect()
    }
}

/// Answers `query` by exhaustive enumeration. Rationale is left empty.
pub fn brute_force_answer(query: &CausalQuery) -> Result<CausalAnswer, OracleError> {
    let m = &query.matched;
    let model = Model::new(m)?;
    let n = model.ids.len();
    let f: Vec<usize> = query.focus.iter().map(|&r| model.at(m.node(r))).collect();
    let all = 0..n;

    let entities = |s: BTreeSet<EntityId>| Ok(CausalAnswer { value: AnswerValue::Entities(s), rationale: vec![] });

    let truth = match query.task {
        TaskKind::Cai => return entities(model.set(all.filter(|&x| model.causes(x, f[0])))),
        TaskKind::Ca => {
            return entities(model.set(all.filter(|&x| model.causes(x, f[0]) && !model.direct(x, f[0]))))
        }
        TaskKind::Ar => {
            return entities(model.set(all.filter(|&x| model.causes(f[0], x) && !model.direct(f[0], x))))
        }
        TaskKind::Cb => return entities(model.set(all.filter(|&x| model.direct(x, f[0])))),
        TaskKind::Coi => {
            // direct causes of the outcome plus nodes confounding one of
            // them with the outcome
            let y = f[0];
            let direct: Vec<usize> = (0..n).filter(|&x| model.direct(x, y)).collect();
            let confounders = (0..n).filter(|&w| {
                direct.iter().any(|&x| x != w && model.causes(w, x)) && model.causes(w, y)
            });
            return entities(model.set(direct.iter().copied().chain(confounders)));
        }
        TaskKind::Bas => {
            let (t, o) = (f[0], f[1]);
            let candidates: Vec<usize> = (0..n).filter(|&v| v != t && v != o).collect();
            let minimal = (0u32..1 << candidates.len())
                .map(|bits| {
                    candidates
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| bits >> i & 1 == 1)
                        .map(|(_, &v)| v)
                        .collect::<BTreeSet<usize>>()
                })
                .filter(|z| model.backdoor_valid(t, o, z))
                .min_by_key(|z| (z.len(), z.iter().copied().collect::<Vec<_>>()))
                .unwrap_or_default();
            return entities(model.set(minimal));
        }
        TaskKind::Cde => !model.solve(&BTreeMap::from([(f[0], true), (f[1], false)]))[f[2]],
        TaskKind::Cr => model.solve(&BTreeMap::from([(f[0], false)]))[f[1]],
        TaskKind::Nde => {
            let natural = model.solve(&BTreeMap::new());
            !model.solve(&BTreeMap::from([(f[0], false), (f[1], natural[f[1]])]))[f[2]]
        }
        TaskKind::Nie => {
            let natural = model.solve(&BTreeMap::new());
            let mediator = model.solve(&BTreeMap::from([(f[0], false)]))[f[1]];
            model.solve(&BTreeMap::from([(f[0], natural[f[0]]), (f[1], mediator)]))[f[2]]
        }
        TaskKind::Sc => !model.solve(&BTreeMap::from([(f[0], false)]))[f[1]],
        TaskKind::Nc => {
            let failed: Vec<World> =
                model.consistent(&BTreeMap::new(), true).into_iter().filter(|w| !w[f[1]]).collect();
            !failed.is_empty() && failed.iter().all(|w| !w[f[0]])
        }
    };
    let polarity = query.polarity.ok_or(OracleError::PolarityMismatch { task: query.task })?;
    Ok(CausalAnswer { value: AnswerValue::Truth(polarity.apply(truth)), rationale: vec![] })
}
