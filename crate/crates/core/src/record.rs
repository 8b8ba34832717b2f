//! Benchmark question records and their structural invariants.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::TemplateKind;
use crate::oracle::{AnswerFormat, Rung, TaskKind};
use crate::scene::EntityId;

pub const MCQ_OPTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Image,
    Graph,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub text: String,
    /// `None` on yes/no options.
    pub provenance: Option<Provenance>,
}

impl AnswerOption {
    pub fn new(text: impl Into<String>, provenance: Provenance) -> Self {
        AnswerOption { text: text.into(), provenance: Some(provenance) }
    }

    pub fn yes_no() -> Vec<AnswerOption> {
        ["yes", "no"].iter().map(|t| AnswerOption { text: t.to_string(), provenance: None }).collect()
    }
}

/// Option index for multiple choice, the answer itself for yes/no.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Index(usize),
    Answer(bool),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub image_id: EntityId,
    pub task: TaskKind,
    pub rung: Rung,
    pub graph_kind: TemplateKind,
    pub format: AnswerFormat,
    pub question: String,
    pub context: Vec<String>,
    pub rationale: Vec<String>,
    pub options: Vec<AnswerOption>,
    pub gold: Gold,
    #[serde(default)]
    pub robustness: bool,
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("record {id}: {problem}")]
pub struct RecordError {
    pub id: String,
    pub problem: String,
}

impl QuestionRecord {
    /// Surface text of the gold option.
    pub fn gold_text(&self) -> &str {
        match self.gold {
            Gold::Index(i) => self.options.get(i).map(|o| o.text.as_str()).unwrap_or(""),
            Gold::Answer(true) => "yes",
            Gold::Answer(false) => "no",
        }
    }

    /// Index of the gold option within `options`.
    pub fn gold_index(&self) -> Option<usize> {
        match self.gold {
            Gold::Index(i) => Some(i),
            Gold::Answer(yes) => self.options.iter().position(|o| o.text == if yes { "yes" } else { "no" }),
        }
    }

    /// Checks arity, tag consistency and option provenance.
    pub fn validate(&self) -> Result<(), RecordError> {
        let fail = |problem: String| Err(RecordError { id: self.id.clone(), problem });
        if self.id.is_empty() {
            return fail("empty id".into());
        }
        if self.question.trim().is_empty() {
            return fail("empty question".into());
        }
        if self.rung != self.task.rung() {
            return fail(format!("rung {} does not match task {}", self.rung, self.task));
        }
        if !self.task.compatible_with(self.graph_kind) {
            return fail(format!("task {} is not defined on {} graphs", self.task, self.graph_kind));
        }
        let expected = if self.robustness { AnswerFormat::Binary } else { self.task.format() };
        if self.format != expected {
            return fail(format!("format {:?} does not match task {}", self.format, self.task));
        }
        match (self.format, self.gold) {
            (AnswerFormat::Mcq, Gold::Index(i)) => {
                if self.options.len() != MCQ_OPTIONS {
                    return fail(format!("{} options, expected {MCQ_OPTIONS}", self.options.len()));
                }
                if i >= self.options.len() {
                    return fail(format!("gold index {i} out of range"));
                }
                let texts: BTreeSet<String> = self.options.iter().map(|o| o.text.to_lowercase()).collect();
                if texts.len() != self.options.len() {
                    return fail("options are not pairwise distinct".into());
                }
                let provenances: BTreeSet<Option<Provenance>> = self.options.iter().map(|o| o.provenance).collect();
                let want: BTreeSet<Option<Provenance>> =
                    [Provenance::Gold, Provenance::Image, Provenance::Graph, Provenance::Text].map(Some).into();
                if provenances != want {
                    return fail("options must be one gold plus one image, graph and text distractor".into());
                }
                if self.options[i].provenance != Some(Provenance::Gold) {
                    return fail("gold index does not point at the gold option".into());
                }
            }
            (AnswerFormat::Binary, Gold::Answer(yes)) => {
                if self.options != AnswerOption::yes_no() {
                    return fail("binary options must be yes, no".into());
                }
                if self.robustness && yes {
                    return fail("robustness records must have gold no".into());
                }
            }
            (format, gold) => return fail(format!("gold {gold:?} does not fit format {format:?}")),
        }
        Ok(())
    }
}
