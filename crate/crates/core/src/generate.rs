//! Question synthesis over template matches.
//!
//! Each compatible (task, focus) pair of a match is turned into a record by
//! filling a fixed template. Multiple-choice answers come from the oracle;
//! distractors are drawn from the scene (image), the causal graph (graph)
//! and a curated lexicon (text). Binary tasks always emit an affirmative and
//! a negated question with complementary answers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{TextGenClient, TextGenRequest};
use crate::extract::{build_causal_edges, match_templates, CausalGraph, PredicateLexicon, Role, TemplateKind, TemplateMatch, VerbClass};
use crate::oracle::{answer_task, AnswerFormat, AnswerValue, CausalQuery, OracleError, Polarity, TaskKind};
use crate::record::{AnswerOption, Gold, Provenance, QuestionRecord};
use crate::scene::{index_regions, EntityId, SceneGraph};
use crate::seed::derive_seed;

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.toml");
const DEFAULT_DISTRACTORS: &str = include_str!("../data/distractors.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenerateError {
    #[error("invalid template library: {0}")]
    InvalidTemplates(String),
    #[error("invalid distractor lexicon: {0}")]
    InvalidDistractors(String),
    #[error("no template for task {0}")]
    MissingTemplate(TaskKind),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{id}: question would reveal {term:?}")]
    LeakageViolation { id: String, term: String },
    #[error("{id}: could not build four distinct options")]
    InsufficientOptions { id: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Wording for one verb class.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Vocabulary {
    pub steady: String,
    pub fall: String,
    pub stay: String,
    pub release: String,
    pub failed: String,
    pub intact: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct QuestionTemplate {
    pub task: TaskKind,
    pub affirmative: String,
    #[serde(default)]
    pub negated: Option<String>,
    /// Extra strings the filled question must not contain.
    #[serde(default)]
    pub forbid: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateFile {
    vocabulary: BTreeMap<VerbClass, Vocabulary>,
    template: Vec<QuestionTemplate>,
}

#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    vocabulary: BTreeMap<VerbClass, Vocabulary>,
    templates: BTreeMap<TaskKind, QuestionTemplate>,
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        TemplateLibrary::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl TemplateLibrary {
    /// Parses and checks that every task has a template whose slots resolve.
    pub fn parse(text: &str) -> Result<Self, GenerateError> {
        let bad = |m: String| GenerateError::InvalidTemplates(m);
        let file: TemplateFile = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        for class in [VerbClass::Support, VerbClass::Hold] {
            if !file.vocabulary.contains_key(&class) {
                return Err(bad(format!("missing vocabulary for {}", class.verb())));
            }
        }
        let mut templates = BTreeMap::new();
        for t in file.template {
            if t.task.is_binary() != t.negated.is_some() {
                return Err(bad(format!("{}: negated form required exactly for binary tasks", t.task)));
            }
            if templates.insert(t.task, t.clone()).is_some() {
                return Err(bad(format!("duplicate template for {}", t.task)));
            }
        }
        let library = TemplateLibrary { vocabulary: file.vocabulary, templates };
        for task in TaskKind::ALL {
            let t = library.templates.get(&task).ok_or_else(|| bad(format!("no template for {task}")))?;
            let arity = TemplateKind::ALL
                .into_iter()
                .flat_map(|k| task.foci(k))
                .map(|f| f.len())
                .min()
                .unwrap_or(0);
            let names: Vec<String> = (0..arity).map(|i| format!("x{i}")).collect();
            for pattern in std::iter::once(&t.affirmative).chain(&t.negated) {
                let filled = library.fill(pattern, &names, VerbClass::Support);
                if filled.contains('{') || filled.contains('}') {
                    return Err(bad(format!("{task}: unresolved slot in {pattern:?}")));
                }
            }
        }
        Ok(library)
    }

    pub fn load(path: &Path) -> Result<Self, GenerateError> {
        TemplateLibrary::parse(&read(path)?)
    }

    pub fn template(&self, task: TaskKind) -> Option<&QuestionTemplate> {
        self.templates.get(&task)
    }

    fn fill(&self, pattern: &str, names: &[String], class: VerbClass) -> String {
        let v = &self.vocabulary[&class];
        let mut out = pattern.to_string();
        for (i, name) in names.iter().enumerate() {
            out = out.replace(&format!("{{f{i}}}"), name).replace(&format!("{{be{i}}}"), be(name));
        }
        for (slot, value) in [
            ("steady", &v.steady),
            ("fall", &v.fall),
            ("stay", &v.stay),
            ("release", &v.release),
            ("failed", &v.failed),
            ("intact", &v.intact),
        ] {
            out = out.replace(&format!("{{{slot}}}"), value);
        }
        out
    }
}

/// Crude number agreement on the head noun.
fn be(name: &str) -> &'static str {
    let head = name.rsplit(' ').next().unwrap_or(name);
    if head.ends_with('s') && !head.ends_with("ss") {
        "are"
    } else {
        "is"
    }
}

/// Induced entities for text distractors, keyed by verb class.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct DistractorLexicon {
    pub support: Vec<String>,
    pub hold: Vec<String>,
}

impl Default for DistractorLexicon {
    fn default() -> Self {
        DistractorLexicon::parse(DEFAULT_DISTRACTORS).expect("bundled distractor lexicon is valid")
    }
}

impl DistractorLexicon {
    pub fn parse(text: &str) -> Result<Self, GenerateError> {
        let lex: DistractorLexicon =
            toml::from_str(text).map_err(|e| GenerateError::InvalidDistractors(e.to_string()))?;
        if lex.support.is_empty() || lex.hold.is_empty() {
            return Err(GenerateError::InvalidDistractors("both classes need at least one entry".into()));
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, GenerateError> {
        DistractorLexicon::parse(&read(path)?)
    }

    pub fn words(&self, class: VerbClass) -> &[String] {
        match class {
            VerbClass::Support => &self.support,
            VerbClass::Hold => &self.hold,
        }
    }
}

fn read(path: &Path) -> Result<String, GenerateError> {
    std::fs::read_to_string(path)
        .map_err(|e| GenerateError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Where an image distractor came from when the scene had no spare entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFallback {
    SiblingPool,
    Lexicon,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenerationWarning {
    MissingContext { record: String, message: String },
    ImageDistractorFallback { record: String, source: ImageFallback },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub record: QuestionRecord,
    pub warnings: Vec<GenerationWarning>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distractor {
    pub text: String,
    pub provenance: Provenance,
}

/// Tasks generated for a match, in fixed order.
pub fn select_tasks(matched: &TemplateMatch) -> Vec<TaskKind> {
    TaskKind::for_kind(matched.kind).to_vec()
}

/// Stable record id.
pub fn record_id(image: &EntityId, matched: &TemplateMatch, task: TaskKind, focus: &[Role], polarity: Option<Polarity>) -> String {
    let roles: String = focus.iter().map(|r| r.to_string()).collect();
    let mut id = format!("{image}/{}/{task}/{roles}", matched.key());
    match polarity {
        Some(Polarity::Affirmative) => id.push_str("/aff"),
        Some(Polarity::Negated) => id.push_str("/neg"),
        None => {}
    }
    id
}

/// Case-insensitive containment, the leakage test.
pub fn leaks(question: &str, term: &str) -> bool {
    !term.is_empty() && question.to_lowercase().contains(&term.to_lowercase())
}

/// "a", "a and b", "a, b and c"
pub fn join_names(names: &[&str]) -> String {
    match names {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Splits a joined answer back into names.
pub fn split_names(text: &str) -> Vec<String> {
    text.split(" and ")
        .flat_map(|part| part.split(", "))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Longest path from a root, within the match.
fn depths(m: &TemplateMatch) -> BTreeMap<&EntityId, usize> {
    let mut depth: BTreeMap<&EntityId, usize> = m.bindings.values().map(|id| (id, 0)).collect();
    for _ in 0..m.bindings.len() {
        for e in &m.edges {
            let d = depth[&e.cause] + 1;
            if depth[&e.effect] < d {
                depth.insert(&e.effect, d);
            }
        }
    }
    depth
}

/// Gold entities ordered nearest-the-outcome first.
fn ordered_gold<'a>(m: &'a TemplateMatch, gold: &'a BTreeSet<EntityId>) -> Vec<&'a EntityId> {
    let depth = depths(m);
    let mut ids: Vec<&EntityId> = gold.iter().collect();
    ids.sort_by(|a, b| depth.get(b).cmp(&depth.get(a)).then(a.cmp(b)));
    ids
}

/// Verb class of the edge that sustains the question's last focus entity.
fn outcome_class(m: &TemplateMatch, focus: &[Role]) -> VerbClass {
    let last = m.node(*focus.last().expect("non-empty focus"));
    m.edges
        .iter()
        .find(|e| &e.effect == last)
        .or_else(|| m.edges.iter().find(|e| &e.cause == last))
        .or(m.edges.first())
        .map(|e| e.class)
        .unwrap_or_default()
}

fn distinct_names<'a>(scene: &'a SceneGraph, ids: &[&'a EntityId]) -> Vec<&'a str> {
    let mut names: Vec<&str> = Vec::new();
    for id in ids {
        let name = scene.name_of(id);
        if !names.contains(&name) {
            names.push(name);
        }
    }
    names
}

#[derive(Debug, Clone, Default)]
pub struct QuestionGenerator {
    pub templates: TemplateLibrary,
    pub distractors: DistractorLexicon,
    sibling_pool: Vec<String>,
}

impl QuestionGenerator {
    pub fn new(templates: TemplateLibrary, distractors: DistractorLexicon) -> Self {
        QuestionGenerator { templates, distractors, sibling_pool: Vec::new() }
    }

    /// Entity names from other images, used when a scene has no entity
    /// outside its causal graph.
    pub fn with_sibling_pool(mut self, names: impl IntoIterator<Item = String>) -> Self {
        let pool: BTreeSet<String> = names.into_iter().collect();
        self.sibling_pool = pool.into_iter().collect();
        self
    }

    /// Image, graph and text distractors for a gold set. Draws from `rng` in
    /// that order.
    pub fn make_distractors(
        &self,
        scene: &SceneGraph,
        graph: &CausalGraph,
        matched: &TemplateMatch,
        gold: &BTreeSet<EntityId>,
        focus: &[Role],
        rng: &mut ChaCha8Rng,
    ) -> (Vec<Distractor>, Option<ImageFallback>) {
        let class = outcome_class(matched, focus);
        let gold_ids = ordered_gold(matched, gold);
        let gold_text = join_names(&distinct_names(scene, &gold_ids));
        let scene_names: BTreeSet<String> = scene
            .entities
            .iter()
            .flat_map(|e| std::iter::once(&e.name).chain(&e.synonyms))
            .map(|n| n.to_lowercase())
            .collect();
        let mut taken: BTreeSet<String> = BTreeSet::from([gold_text.to_lowercase()]);
        let mut out = Vec::new();
        let mut push = |text: String, provenance: Provenance, taken: &mut BTreeSet<String>| {
            taken.insert(text.to_lowercase());
            out.push(Distractor { text, provenance });
        };

        // graph: a nearer gold member when the gold set is compound
        let focus_ids: Vec<&EntityId> = focus.iter().map(|&r| matched.node(r)).collect();
        let graph_text = if gold_ids.len() >= 2 {
            gold_ids
                .iter()
                .map(|id| scene.name_of(id).to_string())
                .find(|n| !taken.contains(&n.to_lowercase()))
        } else {
            None
        }
        .or_else(|| {
            let in_match: Vec<&EntityId> = matched
                .ordered_nodes()
                .into_iter()
                .filter(|id| !gold.contains(*id) && !focus_ids.contains(id))
                .collect();
            let elsewhere: Vec<&EntityId> =
                graph.nodes.iter().filter(|id| !gold.contains(*id) && !matched.bindings.values().any(|b| b == *id)).collect();
            [in_match, elsewhere, focus_ids.clone()].into_iter().find_map(|tier| {
                let names: Vec<String> = tier
                    .iter()
                    .map(|id| scene.name_of(id).to_string())
                    .filter(|n| !taken.contains(&n.to_lowercase()))
                    .collect();
                names.choose(rng).cloned()
            })
        });

        // image: in the scene, outside the causal graph
        let mut image_candidates: Vec<String> = scene
            .entities
            .iter()
            .filter(|e| !graph.nodes.contains(&e.id))
            .map(|e| e.name.clone())
            .filter(|n| !taken.contains(&n.to_lowercase()) && graph_text.as_deref() != Some(n.as_str()))
            .collect();
        image_candidates.sort();
        image_candidates.dedup();
        let mut fallback = None;
        let mut image_text = image_candidates.choose(rng).cloned();
        if image_text.is_none() {
            let pool: Vec<&String> = self
                .sibling_pool
                .iter()
                .filter(|n| !scene_names.contains(&n.to_lowercase()) && !taken.contains(&n.to_lowercase()))
                .collect();
            image_text = pool.choose(rng).map(|s| s.to_string());
            fallback = Some(ImageFallback::SiblingPool);
        }

        let text_candidates = |exclude: &BTreeSet<String>| -> Vec<String> {
            self.distractors
                .words(class)
                .iter()
                .filter(|w| !scene_names.contains(&w.to_lowercase()) && !exclude.contains(&w.to_lowercase()))
                .cloned()
                .collect()
        };
        if image_text.is_none() {
            image_text = text_candidates(&taken).choose(rng).cloned();
            fallback = Some(ImageFallback::Lexicon);
        }

        if let Some(t) = graph_text {
            push(t, Provenance::Graph, &mut taken);
        }
        if let Some(t) = image_text {
            push(t, Provenance::Image, &mut taken);
        }
        if let Some(t) = text_candidates(&taken).choose(rng).cloned() {
            push(t, Provenance::Text, &mut taken);
        }
        out.sort_by_key(|d| d.provenance);
        (out, fallback)
    }

    /// Fills one record. `polarity` must be set exactly for binary tasks.
    #[allow(clippy::too_many_arguments)]
    pub fn generate_question(
        &self,
        scene: &SceneGraph,
        graph: &CausalGraph,
        matched: &TemplateMatch,
        task: TaskKind,
        focus: &[Role],
        polarity: Option<Polarity>,
        seed: u64,
    ) -> Result<Generated, GenerateError> {
        let query = CausalQuery::new(task, matched.clone(), focus.to_vec(), polarity)?;
        let answer = answer_task(&query)?;
        let template = self.templates.template(task).ok_or(GenerateError::MissingTemplate(task))?;
        let id = record_id(&scene.image_id, matched, task, focus, polarity);
        let class = outcome_class(matched, focus);
        let names: Vec<String> = focus.iter().map(|&r| scene.name_of(matched.node(r)).to_string()).collect();
        let pattern = match polarity {
            Some(Polarity::Negated) => template.negated.as_ref().ok_or(GenerateError::MissingTemplate(task))?,
            _ => &template.affirmative,
        };
        let question = self.templates.fill(pattern, &names, class);

        let mut warnings = Vec::new();
        let context = match index_regions(scene, &matched.nodes()) {
            Ok(regions) => regions.into_iter().map(|r| r.text.clone()).collect(),
            Err(e) => {
                log::warn!("{id}: no context: {e}");
                warnings.push(GenerationWarning::MissingContext { record: id.clone(), message: e.to_string() });
                Vec::new()
            }
        };
        let rationale = matched.edges.iter().map(|e| e.verbalize(scene)).collect();
        let mut constraints = template.forbid.clone();

        let (options, gold) = match answer.value {
            AnswerValue::Truth(yes) => (AnswerOption::yes_no(), Gold::Answer(yes)),
            AnswerValue::Entities(gold_set) => {
                let gold_ids = ordered_gold(matched, &gold_set);
                let gold_names = distinct_names(scene, &gold_ids);
                if gold_names.is_empty() {
                    return Err(GenerateError::InsufficientOptions { id });
                }
                constraints.extend(gold_names.iter().map(|n| n.to_string()));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (distractors, fallback) =
                    self.make_distractors(scene, graph, matched, &gold_set, focus, &mut rng);
                if let Some(source) = fallback {
                    log::debug!("{id}: image distractor from {source:?}");
                    warnings.push(GenerationWarning::ImageDistractorFallback { record: id.clone(), source });
                }
                if distractors.len() != 3 {
                    return Err(GenerateError::InsufficientOptions { id });
                }
                let mut options = vec![AnswerOption::new(join_names(&gold_names), Provenance::Gold)];
                options.extend(distractors.into_iter().map(|d| AnswerOption::new(d.text, d.provenance)));
                options.shuffle(&mut rng);
                let index = options.iter().position(|o| o.provenance == Some(Provenance::Gold)).expect("gold kept");
                (options, Gold::Index(index))
            }
        };
        if let Some(term) = constraints.iter().find(|t| leaks(&question, t)) {
            return Err(GenerateError::LeakageViolation { id, term: term.clone() });
        }
        let record = QuestionRecord {
            id,
            image_id: scene.image_id.clone(),
            task,
            rung: task.rung(),
            graph_kind: matched.kind,
            format: task.format(),
            question,
            context,
            rationale,
            options,
            gold,
            robustness: false,
            seed,
        };
        Ok(Generated { record, warnings })
    }

    /// Affirmative and negated variants of a binary question.
    pub fn make_binary_pair(
        &self,
        scene: &SceneGraph,
        graph: &CausalGraph,
        matched: &TemplateMatch,
        task: TaskKind,
        focus: &[Role],
        seed: u64,
    ) -> Result<[Generated; 2], GenerateError> {
        let aff = self.generate_question(scene, graph, matched, task, focus, Some(Polarity::Affirmative), seed)?;
        let neg = self.generate_question(scene, graph, matched, task, focus, Some(Polarity::Negated), seed)?;
        Ok([aff, neg])
    }

    /// Every record for every compatible (task, focus) of a match. Each
    /// record's seed is derived from `seed` and its id.
    pub fn generate_for_match(
        &self,
        scene: &SceneGraph,
        graph: &CausalGraph,
        matched: &TemplateMatch,
        seed: u64,
    ) -> MatchGeneration {
        let mut out = MatchGeneration::default();
        for task in select_tasks(matched) {
            for focus in task.foci(matched.kind) {
                let results: Vec<Result<Generated, GenerateError>> = if task.is_binary() {
                    let s = derive_seed(seed, &record_id(&scene.image_id, matched, task, &focus, None));
                    match self.make_binary_pair(scene, graph, matched, task, &focus, s) {
                        Ok(pair) => pair.into_iter().map(Ok).collect(),
                        Err(e) => vec![Err(e)],
                    }
                } else {
                    let s = derive_seed(seed, &record_id(&scene.image_id, matched, task, &focus, None));
                    vec![self.generate_question(scene, graph, matched, task, &focus, None, s)]
                };
                for r in results {
                    match r {
                        Ok(g) => {
                            out.warnings.extend(g.warnings);
                            out.records.push(g.record);
                        }
                        Err(e) => {
                            log::debug!("skipped: {e}");
                            out.skipped.push(e);
                        }
                    }
                }
            }
        }
        out
    }

    /// Extracts, matches and generates for one scene.
    pub fn generate_scene(&self, scene: &SceneGraph, lexicon: &PredicateLexicon, seed: u64) -> MatchGeneration {
        let extraction = build_causal_edges(scene, lexicon);
        let matches = match_templates(&extraction.graph).expect("extraction yields a DAG");
        let mut out = MatchGeneration::default();
        for m in &matches {
            out.extend(self.generate_for_match(scene, &extraction.graph, m, seed));
        }
        out
    }

    /// Generates over a corpus in parallel; output order follows `scenes`.
    pub fn generate_corpus(&self, scenes: &[SceneGraph], lexicon: &PredicateLexicon, seed: u64) -> MatchGeneration {
        let parts: Vec<MatchGeneration> = scenes.par_iter().map(|s| self.generate_scene(s, lexicon, seed)).collect();
        let mut out = MatchGeneration::default();
        for p in parts {
            out.extend(p);
        }
        out
    }
}

/// Names of every entity in a corpus, for [`QuestionGenerator::with_sibling_pool`].
pub fn corpus_names(scenes: &[SceneGraph]) -> Vec<String> {
    scenes.iter().flat_map(|s| s.entities.iter().map(|e| e.name.clone())).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchGeneration {
    pub records: Vec<QuestionRecord>,
    pub warnings: Vec<GenerationWarning>,
    pub skipped: Vec<GenerateError>,
}

impl MatchGeneration {
    fn extend(&mut self, other: MatchGeneration) {
        self.records.extend(other.records);
        self.warnings.extend(other.warnings);
        self.skipped.extend(other.skipped);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParaphraseStatus {
    Accepted,
    Rejected(String),
    Unavailable(String),
}

#[derive(Serialize, Deserialize)]
struct ParaphrasePayload {
    question: String,
    options: Vec<ParaphraseOption>,
}

#[derive(Serialize, Deserialize)]
struct ParaphraseOption {
    text: String,
    /// Index of the option in the original record.
    source: usize,
}

const PARAPHRASE_INSTRUCTION: &str = "Rewrite the question and options in natural, fluent English. \
Keep every option's meaning and its \"source\" index. Do not name any entity listed under \"forbidden\" \
in the question. Reply with JSON of the same shape.";

/// Rewrites a record through an external generator. The original record is
/// returned on any failure.
pub fn paraphrase_external(record: &QuestionRecord, client: &dyn TextGenClient) -> (QuestionRecord, ParaphraseStatus) {
    let payload = ParaphrasePayload {
        question: record.question.clone(),
        options: record
            .options
            .iter()
            .enumerate()
            .map(|(source, o)| ParaphraseOption { text: o.text.clone(), source })
            .collect(),
    };
    let forbidden: Vec<String> = match record.format {
        AnswerFormat::Mcq => split_names(record.gold_text()),
        AnswerFormat::Binary => Vec::new(),
    };
    let request = TextGenRequest {
        instruction: format!("{PARAPHRASE_INSTRUCTION}\nforbidden: {}", forbidden.join(", ")),
        demonstrations: Vec::new(),
        payload: serde_json::to_string(&payload).expect("payload serializes"),
    };
    let reject = |why: String| {
        log::warn!("{}: paraphrase rejected: {why}", record.id);
        (record.clone(), ParaphraseStatus::Rejected(why))
    };
    let response = match client.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{}: paraphrase client unavailable: {e}", record.id);
            return (record.clone(), ParaphraseStatus::Unavailable(e.to_string()));
        }
    };
    let rewritten: ParaphrasePayload = match serde_json::from_str(&response.text) {
        Ok(p) => p,
        Err(e) => return reject(format!("unparseable response: {e}")),
    };
    let sources: BTreeSet<usize> = rewritten.options.iter().map(|o| o.source).collect();
    if rewritten.options.len() != record.options.len() || sources != (0..record.options.len()).collect() {
        return reject("options are not a permutation of the originals".into());
    }
    if let Some(term) = forbidden.iter().find(|t| leaks(&rewritten.question, t)) {
        return reject(format!("question reveals {term:?}"));
    }
    let mut out = record.clone();
    out.question = rewritten.question;
    match record.format {
        AnswerFormat::Binary => {
            if rewritten.options.iter().any(|o| o.text != record.options[o.source].text) {
                return reject("yes/no options must not change".into());
            }
        }
        AnswerFormat::Mcq => {
            out.options = rewritten
                .options
                .iter()
                .map(|o| AnswerOption { text: o.text.clone(), provenance: record.options[o.source].provenance })
                .collect();
            let old_gold = record.gold_index().expect("valid gold");
            let new_gold = rewritten.options.iter().position(|o| o.source == old_gold).expect("permutation");
            out.gold = Gold::Index(new_gold);
        }
    }
    if let Err(e) = out.validate() {
        return reject(e.problem);
    }
    (out, ParaphraseStatus::Accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ClientError, EchoTextClient, TextGenResponse};
    use crate::scene::{parse_scene_graph, HumanLexicon};

    const SHELF_SCENE: &str = r#"{"image_id": 4,
        "objects": [
            {"object_id": 1, "names": ["wall"]},
            {"object_id": 2, "names": ["shelf"]},
            {"object_id": 3, "names": ["books"]},
            {"object_id": 4, "names": ["window"]}],
        "relationships": [
            {"subject_id": 2, "predicate": "fixed to", "object_id": 1},
            {"subject_id": 3, "predicate": "on", "object_id": 2},
            {"subject_id": 3, "predicate": "leaning on", "object_id": 1}],
        "regions": [{"phrase": "books on a shelf", "object_ids": [3, 2]}]}"#;

    fn shelf_scene() -> (SceneGraph, CausalGraph, TemplateMatch) {
        let scene = parse_scene_graph(SHELF_SCENE, &HumanLexicon::default()).unwrap();
        let graph = build_causal_edges(&scene, &PredicateLexicon::default()).graph;
        let m = match_templates(&graph).unwrap().remove(0);
        (scene, graph, m)
    }

    #[test]
    fn task_selection() {
        let (_, _, m) = shelf_scene();
        assert_eq!(select_tasks(&m).len(), 6);
    }

    #[test]
    fn confounder_question_on_shelf_scene() {
        let (scene, graph, m) = shelf_scene();
        let g = QuestionGenerator::default()
            .generate_question(&scene, &graph, &m, TaskKind::Coi, &[Role::Y], None, 3)
            .unwrap();
        let r = &g.record;
        assert_eq!(r.question, "Why are the books placed steadily?");
        assert_eq!(r.gold_text(), "shelf and wall");
        r.validate().unwrap();
        let by = |p| r.options.iter().find(|o| o.provenance == Some(p)).unwrap().text.as_str();
        assert_eq!(by(Provenance::Image), "window");
        assert_eq!(by(Provenance::Graph), "shelf");
        assert!(DistractorLexicon::default().support.iter().any(|w| w == by(Provenance::Text)));
        assert!(r.rationale.contains(&"shelf supports books".to_string()));
        assert_eq!(r.context, vec!["books on a shelf"]);
    }

    #[test]
    fn sufficient_cause_pair() {
        let (scene, graph, m) = shelf_scene();
        let [aff, neg] = QuestionGenerator::default()
            .make_binary_pair(&scene, &graph, &m, TaskKind::Sc, &[Role::W, Role::Y], 1)
            .unwrap();
        assert_eq!(aff.record.question, "If the wall were removed, would the books drop?");
        assert_eq!(aff.record.gold, Gold::Answer(true));
        assert_eq!(neg.record.question, "If the wall were removed, would the books stay steady?");
        assert_eq!(neg.record.gold, Gold::Answer(false));
    }

    #[test]
    fn deterministic() {
        let (scene, graph, m) = shelf_scene();
        let gen = QuestionGenerator::default();
        let a = gen.generate_for_match(&scene, &graph, &m, 11);
        let b = gen.generate_for_match(&scene, &graph, &m, 11);
        assert_eq!(a, b);
        assert!(a.skipped.is_empty(), "{:?}", a.skipped);
        for r in &a.records {
            r.validate().unwrap();
        }
    }

    #[test]
    fn image_fallback_uses_sibling_pool() {
        let doc = r#"{"image_id": 9, "objects": [{"object_id": 1, "names": ["table"]}, {"object_id": 2, "names": ["cup"]},
            {"object_id": 3, "names": ["saucer"]}],
            "relationships": [{"subject_id": 2, "predicate": "on", "object_id": 3}, {"subject_id": 3, "predicate": "on", "object_id": 1}]}"#;
        let scene = parse_scene_graph(doc, &HumanLexicon::default()).unwrap();
        let graph = build_causal_edges(&scene, &PredicateLexicon::default()).graph;
        let m = match_templates(&graph).unwrap().remove(0);
        let gen = QuestionGenerator::default().with_sibling_pool(["lamp".to_string(), "cup".to_string()]);
        let g = gen.generate_question(&scene, &graph, &m, TaskKind::Ca, &[Role::C], None, 0).unwrap();
        assert!(g.warnings.contains(&GenerationWarning::ImageDistractorFallback {
            record: g.record.id.clone(),
            source: ImageFallback::SiblingPool
        }));
        let image = g.record.options.iter().find(|o| o.provenance == Some(Provenance::Image)).unwrap();
        assert_eq!(image.text, "lamp");
        g.record.validate().unwrap();
    }

    #[test]
    fn leakage_is_rejected() {
        let (scene, graph, m) = shelf_scene();
        let mut lib = TemplateLibrary::default();
        lib.templates.get_mut(&TaskKind::Coi).unwrap().affirmative = "Does the wall hold the {f0}?".into();
        let gen = QuestionGenerator::new(lib, DistractorLexicon::default());
        let err = gen.generate_question(&scene, &graph, &m, TaskKind::Coi, &[Role::Y], None, 0).unwrap_err();
        assert!(matches!(err, GenerateError::LeakageViolation { ref term, .. } if term == "wall"));
    }

    #[test]
    fn template_library_validation() {
        assert!(TemplateLibrary::parse("template = []\n[vocabulary]").is_err());
        let broken = DEFAULT_TEMPLATES.replace("{be0}", "{bee}");
        assert!(matches!(TemplateLibrary::parse(&broken), Err(GenerateError::InvalidTemplates(_))));
    }

    #[test]
    fn names() {
        assert_eq!(join_names(&["shelf", "wall"]), "shelf and wall");
        assert_eq!(join_names(&["a", "b", "c"]), "a, b and c");
        assert_eq!(split_names("a, b and c"), ["a", "b", "c"]);
        assert_eq!(be("books"), "are");
        assert_eq!(be("glass"), "is");
    }

    fn coi_record() -> QuestionRecord {
        let (scene, graph, m) = shelf_scene();
        QuestionGenerator::default()
            .generate_question(&scene, &graph, &m, TaskKind::Coi, &[Role::Y], None, 5)
            .unwrap()
            .record
    }

    #[test]
    fn paraphrase_identity() {
        let r = coi_record();
        let (out, status) = paraphrase_external(&r, &EchoTextClient);
        assert_eq!(status, ParaphraseStatus::Accepted);
        assert_eq!(out, r);
    }

    #[test]
    fn paraphrase_leak_rejected() {
        let r = coi_record();
        let client = |req: &TextGenRequest| -> Result<TextGenResponse, ClientError> {
            let mut v: serde_json::Value = serde_json::from_str(&req.payload).unwrap();
            v["question"] = "Why does the shelf keep the books steady?".into();
            Ok(TextGenResponse { text: v.to_string() })
        };
        let (out, status) = paraphrase_external(&r, &client);
        assert!(matches!(status, ParaphraseStatus::Rejected(_)));
        assert_eq!(out, r);
    }

    #[test]
    fn paraphrase_reorder_remaps_gold() {
        let r = coi_record();
        let client = |req: &TextGenRequest| -> Result<TextGenResponse, ClientError> {
            let mut v: serde_json::Value = serde_json::from_str(&req.payload).unwrap();
            v["options"].as_array_mut().unwrap().reverse();
            Ok(TextGenResponse { text: v.to_string() })
        };
        let (out, status) = paraphrase_external(&r, &client);
        assert_eq!(status, ParaphraseStatus::Accepted);
        assert_eq!(out.gold_text(), r.gold_text());
        assert_ne!(out.gold, r.gold);
    }

    #[test]
    fn paraphrase_unavailable() {
        let r = coi_record();
        let client = |_: &TextGenRequest| -> Result<TextGenResponse, ClientError> {
            Err(ClientError::Unavailable("offline".into()))
        };
        let (out, status) = paraphrase_external(&r, &client);
        assert!(matches!(status, ParaphraseStatus::Unavailable(_)));
        assert_eq!(out, r);
    }
}
