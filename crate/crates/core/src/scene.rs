//! Scene-graph ingestion.
//!
//! Parses per-image records in the Visual Genome shape:
//!
//! ```text
//! { "image_id": 1,
//!   "objects": [ { "object_id": 10, "names": ["shelf"], "x": 4, "y": 2, "w": 80, "h": 20 } ],
//!   "relationships": [ { "subject_id": 11, "predicate": "on", "object_id": 10 } ],
//!   "regions": [ { "phrase": "books are on the shelf", "object_ids": [11, 10] } ] }
//! ```
//!
//! Bounding boxes are accepted and discarded. Regions without object references
//! are linked to entities by whole-word name matching.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};
use thiserror::Error;

/// Opaque entity / image identifier. Numeric ids from the corpus are kept as
/// their decimal string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        EntityId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn to_json(&self) -> Value {
        match self.0.parse::<u64>() {
            Ok(n) if n.to_string() == self.0 => json!(n),
            _ => json!(self.0),
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId(s.to_string())
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        id_from_value(&value).ok_or_else(|| serde::de::Error::custom("expected string or integer id"))
    }
}

fn id_from_value(value: &Value) -> Option<EntityId> {
    match value {
        Value::String(s) if !s.is_empty() => Some(EntityId(s.clone())),
        Value::Number(n) => n
            .as_u64()
            .map(|u| u.to_string())
            .or_else(|| n.as_i64().map(|i| i.to_string()))
            .map(EntityId),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Human,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub category: Category,
    pub synonyms: Vec<String>,
    pub image_id: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub subject: EntityId,
    pub predicate: String,
    pub object: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionDescription {
    pub text: String,
    pub entity_ids: Vec<EntityId>,
}

/// One image's annotations. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    pub image_id: EntityId,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub regions: Vec<RegionDescription>,
    index: HashMap<EntityId, usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SceneError {
    #[error("malformed document at {path}: {message}")]
    MalformedDocument { path: String, message: String },
    #[error("dangling reference at {path}: no entity with id {id}")]
    DanglingReference { path: String, id: String },
    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl SceneError {
    fn malformed(path: impl Into<String>, message: impl Into<String>) -> Self {
        SceneError::MalformedDocument { path: path.into(), message: message.into() }
    }

    fn prefixed(self, prefix: &str) -> Self {
        match self {
            SceneError::MalformedDocument { path, message } => {
                SceneError::MalformedDocument { path: format!("{prefix}{path}"), message }
            }
            SceneError::DanglingReference { path, id } => {
                SceneError::DanglingReference { path: format!("{prefix}{path}"), id }
            }
            other => other,
        }
    }
}

impl SceneGraph {
    /// Builds a scene graph, checking referential integrity.
    pub fn new(
        image_id: EntityId,
        entities: Vec<Entity>,
        relations: Vec<Relation>,
        regions: Vec<RegionDescription>,
    ) -> Result<Self, SceneError> {
        let mut index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if e.name.is_empty() {
                return Err(SceneError::malformed(format!("objects[{i}].names"), "empty name"));
            }
            if index.insert(e.id.clone(), i).is_some() {
                return Err(SceneError::malformed(
                    format!("objects[{i}].object_id"),
                    format!("duplicate object id {}", e.id),
                ));
            }
        }
        for (i, r) in relations.iter().enumerate() {
            for (field, id) in [("subject_id", &r.subject), ("object_id", &r.object)] {
                if !index.contains_key(id) {
                    return Err(SceneError::DanglingReference {
                        path: format!("relationships[{i}].{field}"),
                        id: id.0.clone(),
                    });
                }
            }
            if r.subject == r.object {
                return Err(SceneError::malformed(
                    format!("relationships[{i}]"),
                    "subject and object are the same entity",
                ));
            }
        }
        for (i, region) in regions.iter().enumerate() {
            if region.text.is_empty() {
                return Err(SceneError::malformed(format!("regions[{i}].phrase"), "empty phrase"));
            }
            for (j, id) in region.entity_ids.iter().enumerate() {
                if !index.contains_key(id) {
                    return Err(SceneError::DanglingReference {
                        path: format!("regions[{i}].object_ids[{j}]"),
                        id: id.0.clone(),
                    });
                }
            }
        }
        Ok(SceneGraph { image_id, entities, relations, regions, index })
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.index.get(id).map(|&i| &self.entities[i])
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.index.contains_key(id)
    }

    /// Display name of an entity; falls back to the raw id.
    pub fn name_of<'a>(&'a self, id: &'a EntityId) -> &'a str {
        self.entity(id).map(|e| e.name.as_str()).unwrap_or(id.as_str())
    }
}

/// Head-noun lexicon for person words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanLexicon {
    nouns: HashSet<String>,
}

const DEFAULT_HUMANS: &str = include_str!("../data/humans.txt");

impl Default for HumanLexicon {
    fn default() -> Self {
        HumanLexicon::parse(DEFAULT_HUMANS)
    }
}

impl HumanLexicon {
    /// One noun per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        let nouns = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        HumanLexicon { nouns }
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(HumanLexicon::parse(&text))
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }

    pub fn contains(&self, noun: &str) -> bool {
        self.nouns.contains(&noun.to_lowercase())
    }
}

/// Human iff the head noun (last word) is in the lexicon.
pub fn classify_entity(name: &str, lexicon: &HumanLexicon) -> Category {
    let head = name.split_whitespace().last().unwrap_or("").to_lowercase();
    if !head.is_empty() && lexicon.nouns.contains(&head) {
        Category::Human
    } else {
        Category::Object
    }
}

/// Regions mentioning any of `ids`, in corpus order.
pub fn index_regions<'a>(
    scene: &'a SceneGraph,
    ids: &BTreeSet<EntityId>,
) -> Result<Vec<&'a RegionDescription>, SceneError> {
    if let Some(missing) = ids.iter().find(|id| !scene.contains(id)) {
        return Err(SceneError::UnknownEntity(missing.clone()));
    }
    Ok(scene
        .regions
        .iter()
        .filter(|r| r.entity_ids.iter().any(|id| ids.contains(id)))
        .collect())
}

/// Input encodings for scene corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    /// One JSON record per line.
    #[default]
    Ndjson,
    /// A single JSON array of records.
    JsonArray,
}

impl std::str::FromStr for Encoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ndjson" | "jsonl" => Ok(Encoding::Ndjson),
            "json" | "array" => Ok(Encoding::JsonArray),
            other => Err(format!("unknown encoding {other:?} (expected ndjson or json)")),
        }
    }
}

/// Parses one record from JSON text.
pub fn parse_scene_graph(document: &str, humans: &HumanLexicon) -> Result<SceneGraph, SceneError> {
    let value: Value = serde_json::from_str(document)
        .map_err(|e| SceneError::malformed("$", e.to_string()))?;
    scene_from_value(&value, humans)
}

/// Parses a whole corpus; error paths are prefixed with the record position.
pub fn parse_corpus(
    text: &str,
    encoding: Encoding,
    humans: &HumanLexicon,
) -> Result<Vec<SceneGraph>, SceneError> {
    match encoding {
        Encoding::Ndjson => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                parse_scene_graph(line, humans).map_err(|e| e.prefixed(&format!("line {}: ", i + 1)))
            })
            .collect(),
        Encoding::JsonArray => {
            let value: Value = serde_json::from_str(text)
                .map_err(|e| SceneError::malformed("$", e.to_string()))?;
            let items = value
                .as_array()
                .ok_or_else(|| SceneError::malformed("$", "expected an array of records"))?;
            items
                .iter()
                .enumerate()
                .map(|(i, v)| scene_from_value(v, humans).map_err(|e| e.prefixed(&format!("[{i}]."))))
                .collect()
        }
    }
}

pub fn read_corpus(
    path: &Path,
    encoding: Encoding,
    humans: &HumanLexicon,
) -> Result<Vec<SceneGraph>, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_corpus(&text, encoding, humans)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, SceneError> {
    obj.get(key)
        .ok_or_else(|| SceneError::malformed(format!("{path}.{key}"), "missing field"))
}

fn array<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a [Value], SceneError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(&[]),
        Some(Value::Array(items)) => Ok(items),
        Some(_) => Err(SceneError::malformed(key, "expected an array")),
    }
}

fn require_id(value: &Value, path: String) -> Result<EntityId, SceneError> {
    id_from_value(value).ok_or_else(|| SceneError::malformed(path, "expected string or integer id"))
}

pub fn scene_from_value(value: &Value, humans: &HumanLexicon) -> Result<SceneGraph, SceneError> {
    let obj = value
        .as_object()
        .ok_or_else(|| SceneError::malformed("$", "expected an object"))?;
    let image_id = require_id(field(obj, "image_id", "$")?, "image_id".into())?;

    let mut entities = Vec::new();
    for (i, raw) in array(obj, "objects")?.iter().enumerate() {
        let path = format!("objects[{i}]");
        let o = raw
            .as_object()
            .ok_or_else(|| SceneError::malformed(&path, "expected an object"))?;
        let id = require_id(field(o, "object_id", &path)?, format!("{path}.object_id"))?;
        let names: Vec<String> = match field(o, "names", &path)? {
            Value::Array(ns) => ns
                .iter()
                .filter_map(|n| n.as_str())
                .map(|n| n.trim().to_lowercase())
                .filter(|n| !n.is_empty())
                .collect(),
            _ => return Err(SceneError::malformed(format!("{path}.names"), "expected an array")),
        };
        let Some((name, synonyms)) = names.split_first() else {
            return Err(SceneError::malformed(format!("{path}.names"), "no usable name"));
        };
        entities.push(Entity {
            category: classify_entity(name, humans),
            id,
            name: name.clone(),
            synonyms: synonyms.to_vec(),
            image_id: image_id.clone(),
        });
    }

    let mut relations = Vec::new();
    for (i, raw) in array(obj, "relationships")?.iter().enumerate() {
        let path = format!("relationships[{i}]");
        let r = raw
            .as_object()
            .ok_or_else(|| SceneError::malformed(&path, "expected an object"))?;
        let subject = require_id(field(r, "subject_id", &path)?, format!("{path}.subject_id"))?;
        let object = require_id(field(r, "object_id", &path)?, format!("{path}.object_id"))?;
        let predicate = field(r, "predicate", &path)?
            .as_str()
            .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
            .filter(|p| !p.is_empty())
            .ok_or_else(|| SceneError::malformed(format!("{path}.predicate"), "expected a non-empty string"))?;
        // self-relations carry no causal content and are not representable
        if subject == object {
            log::debug!("dropping self-relation at {path}");
            continue;
        }
        relations.push(Relation { subject, predicate, object });
    }

    let mut regions = Vec::new();
    for (i, raw) in array(obj, "regions")?.iter().enumerate() {
        let path = format!("regions[{i}]");
        let r = raw
            .as_object()
            .ok_or_else(|| SceneError::malformed(&path, "expected an object"))?;
        let Some(text) = r.get("phrase").and_then(Value::as_str).map(str::trim) else {
            continue;
        };
        if text.is_empty() {
            continue;
        }
        let mut ids = Vec::new();
        if let Some(Value::Array(refs)) = r.get("object_ids") {
            for (j, v) in refs.iter().enumerate() {
                ids.push(require_id(v, format!("{path}.object_ids[{j}]"))?);
            }
        }
        if ids.is_empty() {
            ids = link_by_name(text, &entities);
        }
        regions.push(RegionDescription { text: text.to_string(), entity_ids: ids });
    }

    SceneGraph::new(image_id, entities, relations, regions)
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True if `needle`'s words occur contiguously in `haystack`'s words.
pub(crate) fn contains_phrase(haystack: &[String], needle: &str) -> bool {
    let n = words(needle);
    !n.is_empty() && haystack.windows(n.len()).any(|w| w == n.as_slice())
}

fn link_by_name(text: &str, entities: &[Entity]) -> Vec<EntityId> {
    let ws = words(text);
    entities
        .iter()
        .filter(|e| contains_phrase(&ws, &e.name))
        .map(|e| e.id.clone())
        .collect()
}

/// Serializes back into the ingestion schema.
pub fn scene_to_value(scene: &SceneGraph) -> Value {
    let objects: Vec<Value> = scene
        .entities
        .iter()
        .map(|e| {
            let mut names = vec![e.name.clone()];
            names.extend(e.synonyms.iter().cloned());
            json!({ "object_id": e.id.to_json(), "names": names })
        })
        .collect();
    let relationships: Vec<Value> = scene
        .relations
        .iter()
        .map(|r| {
            json!({
                "subject_id": r.subject.to_json(),
                "predicate": r.predicate,
                "object_id": r.object.to_json(),
            })
        })
        .collect();
    let regions: Vec<Value> = scene
        .regions
        .iter()
        .map(|r| {
            json!({
                "phrase": r.text,
                "object_ids": r.entity_ids.iter().map(EntityId::to_json).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "image_id": scene.image_id.to_json(),
        "objects": objects,
        "relationships": relationships,
        "regions": regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SHELF_SCENE: &str = r#"{"image_id": 1,
        "objects": [
            {"object_id": 1, "names": ["wall"]},
            {"object_id": 2, "names": ["shelf"], "x": 10, "y": 20, "w": 30, "h": 5},
            {"object_id": 3, "names": ["books"]},
            {"object_id": 4, "names": ["window"]}],
        "relationships": [
            {"subject_id": 2, "predicate": "fixed to", "object_id": 1},
            {"subject_id": 3, "predicate": "on", "object_id": 2}],
        "regions": [
            {"phrase": "books are on the shelf", "object_ids": [3, 2]},
            {"phrase": "a window on the wall", "object_ids": []}]}"#;

    fn humans() -> HumanLexicon {
        HumanLexicon::default()
    }

    #[test]
    fn parses_shelf_scene_scene() {
        let scene = parse_scene_graph(SHELF_SCENE, &humans()).unwrap();
        assert_eq!(scene.entities.len(), 4);
        assert_eq!(scene.relations.len(), 2);
        assert_eq!(scene.relations[1].predicate, "on");
        // second region had no object references: linked by name
        assert_eq!(scene.regions[1].entity_ids, vec![EntityId::from("1"), EntityId::from("4")]);
    }

    #[test]
    fn minimal_record() {
        let scene = parse_scene_graph(
            r#"{"image_id": "img", "objects": [{"object_id": 1, "names": ["cup"]}], "relationships": []}"#,
            &humans(),
        )
        .unwrap();
        assert_eq!(scene.entities.len(), 1);
        assert!(scene.relations.is_empty());
        assert!(scene.regions.is_empty());
    }

    #[test]
    fn dangling_relation_is_reported_with_path() {
        let doc = r#"{"image_id": 1, "objects": [{"object_id": 1, "names": ["cup"]}],
            "relationships": [{"subject_id": 1, "predicate": "on", "object_id": 99}]}"#;
        let err = parse_scene_graph(doc, &humans()).unwrap_err();
        assert_eq!(
            err,
            SceneError::DanglingReference { path: "relationships[0].object_id".into(), id: "99".into() }
        );
    }

    #[test]
    fn dangling_region_reference() {
        let doc = r#"{"image_id": 1, "objects": [{"object_id": 1, "names": ["cup"]}],
            "regions": [{"phrase": "a cup", "object_ids": [1, 7]}]}"#;
        assert!(matches!(
            parse_scene_graph(doc, &humans()),
            Err(SceneError::DanglingReference { ref path, .. }) if path == "regions[0].object_ids[1]"
        ));
    }

    #[test]
    fn malformed_syntax() {
        assert!(matches!(
            parse_scene_graph("{\"image_id\": 1,", &humans()),
            Err(SceneError::MalformedDocument { .. })
        ));
        let dup = r#"{"image_id": 1, "objects": [{"object_id": 1, "names": ["a"]}, {"object_id": 1, "names": ["b"]}]}"#;
        assert!(matches!(parse_scene_graph(dup, &humans()), Err(SceneError::MalformedDocument { .. })));
    }

    #[test]
    fn bad_optional_fields_are_dropped() {
        let doc = r#"{"image_id": 1, "objects": [{"object_id": 1, "names": ["cup"], "x": "left"}],
            "regions": [{"phrase": 42}]}"#;
        let scene = parse_scene_graph(doc, &humans()).unwrap();
        assert_eq!(scene.entities.len(), 1);
        assert!(scene.regions.is_empty());
    }

    #[test]
    fn classify_examples() {
        let lex = humans();
        assert_eq!(classify_entity("woman", &lex), Category::Human);
        assert_eq!(classify_entity("Tennis PLAYER", &lex), Category::Human);
        assert_eq!(classify_entity("shelf", &lex), Category::Object);
        assert_eq!(classify_entity("zzyx", &lex), Category::Object);
        assert!(lex.len() >= 40);
    }

    #[test]
    fn region_index() {
        let scene = parse_scene_graph(SHELF_SCENE, &humans()).unwrap();
        let books: BTreeSet<_> = [EntityId::from("3")].into();
        let texts: Vec<_> = index_regions(&scene, &books).unwrap().iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, ["books are on the shelf"]);
        assert!(index_regions(&scene, &BTreeSet::new()).unwrap().is_empty());
        let unknown: BTreeSet<_> = [EntityId::from("42")].into();
        assert_eq!(
            index_regions(&scene, &unknown).unwrap_err(),
            SceneError::UnknownEntity(EntityId::from("42"))
        );
    }

    #[test]
    fn region_multiplicity_preserved() {
        let doc = r#"{"image_id": 1, "objects": [{"object_id": 1, "names": ["shelf"]}],
            "regions": [{"phrase": "a wooden shelf"}, {"phrase": "shelf near the door"}]}"#;
        let scene = parse_scene_graph(doc, &humans()).unwrap();
        let ids: BTreeSet<_> = [EntityId::from("1")].into();
        assert_eq!(index_regions(&scene, &ids).unwrap().len(), 2);
    }

    #[test]
    fn name_linking_uses_whole_words() {
        let doc = r#"{"image_id": 1, "objects": [{"object_id": 1, "names": ["man"]}, {"object_id": 2, "names": ["woman"]}],
            "regions": [{"phrase": "a woman with an umbrella"}]}"#;
        let scene = parse_scene_graph(doc, &humans()).unwrap();
        assert_eq!(scene.regions[0].entity_ids, vec![EntityId::from("2")]);
    }

    #[test]
    fn json_array_corpus_prefixes_paths() {
        let text = format!("[{SHELF_SCENE}, {{\"image_id\": 2, \"objects\": [{{\"object_id\": 1}}]}}]");
        let err = parse_corpus(&text, Encoding::JsonArray, &humans()).unwrap_err();
        assert!(matches!(err, SceneError::MalformedDocument { ref path, .. } if path == "[1].objects[0].names"));
    }

    #[test]
    fn round_trip_value() {
        let scene = parse_scene_graph(SHELF_SCENE, &humans()).unwrap();
        let again = scene_from_value(&scene_to_value(&scene), &humans()).unwrap();
        assert_eq!(scene, again);
    }
}
