//! Action-request reformulations whose correct answer is always "no".
//!
//! A third party asks for the entity that currently sustains something else
//! in the scene. Fetching it would topple what it supports, so the request
//! should be declined.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::extract::{build_causal_edges, match_templates, CausalEdge, PredicateLexicon, TemplateMatch, VerbClass};
use crate::generate::leaks;
use crate::oracle::AnswerFormat;
use crate::record::{AnswerOption, Gold, QuestionRecord};
use crate::scene::{EntityId, SceneGraph};
use crate::seed::derive_seed;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RobustnessError {
    #[error("{0}: no edge whose cause can be requested without naming its effect")]
    NoSustainingEdge(String),
    #[error("{0}: scene or match for this record not found")]
    UnknownSource(String),
    #[error("invalid persona pool: {0}")]
    InvalidPersonas(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Persona {
    pub name: String,
    /// What they need, e.g. "support for his toys".
    pub need: String,
}

/// Persona pools keyed by the verb class of the requested entity's edge.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PersonaPool {
    pub support: Vec<Persona>,
    pub hold: Vec<Persona>,
}

const DEFAULT_PERSONAS: &str = r#"
support = [
    { name = "Bob", need = "support for his toys" },
    { name = "Alice", need = "something to rest her bag on" },
    { name = "Carlos", need = "a base for his plant pot" },
    { name = "Mei", need = "somewhere to set her laptop" },
    { name = "Priya", need = "a stand for her camera" },
    { name = "Tom", need = "something sturdy to put his tools on" },
]
hold = [
    { name = "Bob", need = "something to hang his coat on" },
    { name = "Alice", need = "a way to keep her papers together" },
    { name = "Carlos", need = "something to carry his groceries" },
    { name = "Mei", need = "a hook for her umbrella" },
    { name = "Priya", need = "a way to keep her scarf in place" },
    { name = "Tom", need = "something to hold his flashlight" },
]
"#;

impl Default for PersonaPool {
    fn default() -> Self {
        PersonaPool::parse(DEFAULT_PERSONAS).expect("bundled personas are valid")
    }
}

impl PersonaPool {
    pub fn parse(text: &str) -> Result<Self, RobustnessError> {
        let pool: PersonaPool = toml::from_str(text).map_err(|e| RobustnessError::InvalidPersonas(e.to_string()))?;
        if pool.support.is_empty() || pool.hold.is_empty() {
            return Err(RobustnessError::InvalidPersonas("both classes need at least one persona".into()));
        }
        Ok(pool)
    }

    fn for_class(&self, class: VerbClass) -> &[Persona] {
        match class {
            VerbClass::Support => &self.support,
            VerbClass::Hold => &self.hold,
        }
    }
}

/// The edge whose cause is requested: into the template's last node, from
/// its nearest parent.
fn request_edges(m: &TemplateMatch) -> Vec<&CausalEdge> {
    let order = m.ordered_nodes();
    let rank = |id: &EntityId| order.iter().position(|n| *n == id).unwrap_or(0);
    let mut edges: Vec<&CausalEdge> = m.edges.iter().collect();
    edges.sort_by_key(|e| (std::cmp::Reverse(rank(&e.effect)), std::cmp::Reverse(rank(&e.cause))));
    edges
}

#[derive(Debug, Clone, Default)]
pub struct Reformulator {
    pub personas: PersonaPool,
}

impl Reformulator {
    pub fn new(personas: PersonaPool) -> Self {
        Reformulator { personas }
    }

    /// Binary "bring this over" request derived from `record`, gold no.
    pub fn reformulate(
        &self,
        record: &QuestionRecord,
        scene: &SceneGraph,
        matched: &TemplateMatch,
        seed: u64,
    ) -> Result<QuestionRecord, RobustnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for edge in request_edges(matched) {
            let cause = scene.name_of(&edge.cause);
            let effect = scene.name_of(&edge.effect);
            if leaks(cause, effect) {
                continue;
            }
            let usable: Vec<&Persona> =
                self.personas.for_class(edge.class).iter().filter(|p| !leaks(&p.need, effect) && !leaks(&p.need, cause)).collect();
            let Some(persona) = usable.choose(&mut rng) else { continue };
            let question = format!("{} needs {}. Can you bring this {cause} over?", persona.name, persona.need);
            return Ok(QuestionRecord {
                id: format!("{}/robust", record.id),
                image_id: record.image_id.clone(),
                task: record.task,
                rung: record.rung,
                graph_kind: record.graph_kind,
                format: AnswerFormat::Binary,
                question,
                context: record.context.clone(),
                rationale: record.rationale.clone(),
                options: AnswerOption::yes_no(),
                gold: Gold::Answer(false),
                robustness: true,
                seed,
            });
        }
        Err(RobustnessError::NoSustainingEdge(record.id.clone()))
    }

    /// Reformulates records against the scenes they came from. The match is
    /// recovered from the key embedded in each record id.
    pub fn reformulate_all(
        &self,
        records: &[QuestionRecord],
        scenes: &[SceneGraph],
        lexicon: &PredicateLexicon,
        seed: u64,
    ) -> (Vec<QuestionRecord>, Vec<RobustnessError>) {
        let by_image: HashMap<&EntityId, &SceneGraph> = scenes.iter().map(|s| (&s.image_id, s)).collect();
        let mut matches: BTreeMap<&EntityId, Vec<TemplateMatch>> = BTreeMap::new();
        let mut out = Vec::new();
        let mut errors = Vec::new();
        for record in records {
            let Some(scene) = by_image.get(&record.image_id) else {
                errors.push(RobustnessError::UnknownSource(record.id.clone()));
                continue;
            };
            let ms = matches.entry(&record.image_id).or_insert_with(|| {
                match_templates(&build_causal_edges(scene, lexicon).graph).unwrap_or_default()
            });
            let Some(m) = ms.iter().find(|m| record.id.contains(&format!("/{}/", m.key()))) else {
                errors.push(RobustnessError::UnknownSource(record.id.clone()));
                continue;
            };
            match self.reformulate(record, scene, m, derive_seed(seed, &record.id)) {
                Ok(r) => out.push(r),
                Err(e) => errors.push(e),
            }
        }
        (out, errors)
    }
}
