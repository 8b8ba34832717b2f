//! Four-step causal reasoning prompts and final-answer extraction.

use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;
use thiserror::Error;

use crate::oracle::{AnswerFormat, TaskKind};
use crate::record::QuestionRecord;

/// Bumped whenever prompt wording changes.
pub const PROMPT_VERSION: &str = "cot-v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CotError {
    #[error("a plan needs at least one step")]
    EmptyPlan,
    #[error("steps must be distinct and in order s1..s4")]
    OutOfOrder,
    #[error("unknown step {0:?}")]
    UnknownStep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Step {
    S1,
    S2,
    S3,
    S4,
}

impl Step {
    pub const ALL: [Step; 4] = [Step::S1, Step::S2, Step::S3, Step::S4];

    pub fn number(self) -> usize {
        self as usize + 1
    }

    fn title(self) -> &'static str {
        match self {
            Step::S1 => "core entities",
            Step::S2 => "causal graph",
            Step::S3 => "task type",
            Step::S4 => "causal knowledge",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.number())
    }
}

impl FromStr for Step {
    type Err = CotError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Step::ALL
            .into_iter()
            .find(|st| st.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CotError::UnknownStep(s.to_string()))
    }
}

/// Ordered, non-empty subsequence of the four steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptPlan {
    steps: Vec<Step>,
}

impl PromptPlan {
    pub fn new(steps: Vec<Step>) -> Result<Self, CotError> {
        if steps.is_empty() {
            return Err(CotError::EmptyPlan);
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CotError::OutOfOrder);
        }
        Ok(PromptPlan { steps })
    }

    pub fn full() -> Self {
        PromptPlan { steps: Step::ALL.to_vec() }
    }

    /// The full plan minus one step.
    pub fn without(step: Step) -> Self {
        PromptPlan { steps: Step::ALL.into_iter().filter(|&s| s != step).collect() }
    }

    /// Full plan followed by the four single-step ablations.
    pub fn ablations() -> Vec<PromptPlan> {
        std::iter::once(PromptPlan::full()).chain(Step::ALL.map(PromptPlan::without)).collect()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }
}

impl fmt::Display for PromptPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.steps.iter().map(Step::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for PromptPlan {
    type Err = CotError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let steps = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>, _>>()?;
        PromptPlan::new(steps)
    }
}

/// Causal concept recalled in step 4.
pub fn knowledge_snippet(task: TaskKind) -> &'static str {
    use TaskKind::*;
    match task {
        Cai => "A cause is an entity whose failure or removal changes the state of another entity. An object resting on or held by something depends causally on it.",
        Ca => "Causal attribution traces an effect back through intermediate entities to an earlier cause that affects it only indirectly.",
        Ar => "An entity can affect another indirectly, through a chain of intermediate entities, even when the two never touch.",
        Cb => "A collider is an entity with two or more direct causes. Each of its causes contributes to keeping it in its current state.",
        Coi => "A confounder causes both a treatment and an outcome. To explain why something is stable, consider its direct cause and any entity that sustains both of them.",
        Bas => "A backdoor adjustment set blocks every non-causal path from treatment to outcome that begins with an arrow into the treatment. A common cause of both lies on such a path.",
        Cde => "The controlled direct effect compares outcomes when the treatment changes while the mediator is held fixed at a chosen value.",
        Cr => "Counterfactual reasoning asks what would happen had a cause been different, with everything else in the scene kept as it is.",
        Nde => "The natural direct effect changes the treatment while the mediator keeps the value it would naturally have had.",
        Nie => "The natural indirect effect keeps the treatment as it is and moves the mediator to the value it would take had the treatment changed.",
        Sc => "A sufficient cause is one whose failure on its own guarantees that the effect fails.",
        Nc => "A necessary cause is one without which the effect could not have failed: if the effect failed, that cause must have failed too.",
    }
}

/// The text block a step contributes to a prompt, including its trailing
/// newline.
pub fn step_block(record: &QuestionRecord, step: Step) -> String {
    let body = match step {
        Step::S1 => "List the entities mentioned in the question and visible in the image that the question depends on.".to_string(),
        Step::S2 => "Describe which of these entities support or hold which others, as directed cause -> effect edges.".to_string(),
        Step::S3 => "Decide what kind of causal question this is, for example finding a cause, a confounder, or an effect under an intervention.".to_string(),
        Step::S4 => format!("Recall the relevant causal concept. {}", knowledge_snippet(record.task)),
    };
    format!("Step {} ({}). {body}\n", step.number(), step.title())
}

pub fn option_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

fn render_question(record: &QuestionRecord, out: &mut String) {
    if !record.context.is_empty() {
        out.push_str("Scene notes:\n");
        for c in &record.context {
            out.push_str(&format!("- {c}\n"));
        }
        out.push('\n');
    }
    out.push_str(&format!("Question: {}\n", record.question));
    match record.format {
        AnswerFormat::Mcq => {
            out.push_str("Options:\n");
            for (i, o) in record.options.iter().enumerate() {
                out.push_str(&format!("({}) {}\n", option_letter(i), o.text));
            }
        }
        AnswerFormat::Binary => out.push_str("Answer yes or no.\n"),
    }
}

fn directive(record: &QuestionRecord) -> &'static str {
    match record.format {
        AnswerFormat::Mcq => "End your response with a single line of the form \"Final answer: (X)\", where X is the letter of one option.\n",
        AnswerFormat::Binary => "End your response with a single line of the form \"Final answer: yes\" or \"Final answer: no\".\n",
    }
}

const PREAMBLE: &str = "You are shown an image and a question about how the objects in it keep each other in place.\n";

pub fn build_prompt(record: &QuestionRecord, plan: &PromptPlan) -> String {
    let mut out = String::from(PREAMBLE);
    out.push_str("Work through the following steps before answering.\n\n");
    for &s in plan.steps() {
        out.push_str(&step_block(record, s));
    }
    out.push('\n');
    render_question(record, &mut out);
    out.push('\n');
    out.push_str(directive(record));
    out
}

/// Prompt without reasoning steps.
pub fn build_direct_prompt(record: &QuestionRecord) -> String {
    let mut out = String::from(PREAMBLE);
    out.push('\n');
    render_question(record, &mut out);
    out.push('\n');
    out.push_str(directive(record));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractedAnswer {
    /// Index into the record's options (yes = 0, no = 1 on binary records).
    Option(usize),
    Unparseable,
}

impl ExtractedAnswer {
    pub fn index(self) -> Option<usize> {
        match self {
            ExtractedAnswer::Option(i) => Some(i),
            ExtractedAnswer::Unparseable => None,
        }
    }
}

static FINAL_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[\s*_#>-]*final\s+answer[\s*_]*[:\-]\s*(.+?)\s*$").unwrap());
static PAREN_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Za-z])\)").unwrap());
static LABELED_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?i:option|choice|answer(?:\s+is)?)\s*:?\s*([A-Z])\b").unwrap());
static BARE_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\(?([A-Za-z])[).:]?\s*$").unwrap());

/// Any letter the text commits to, whether or not it names an option.
pub fn letter_choice(text: &str) -> Option<char> {
    let caps = BARE_LETTER
        .captures(text)
        .or_else(|| PAREN_LETTER.captures(text))
        .or_else(|| LABELED_LETTER.captures(text))?;
    Some(caps[1].chars().next()?.to_ascii_uppercase())
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_words(hay: &[String], needle: &str) -> bool {
    let n = words(needle);
    !n.is_empty() && hay.windows(n.len()).any(|w| w == n.as_slice())
}

fn option_text_match(text: &str, record: &QuestionRecord) -> Option<usize> {
    let hay = words(text);
    let hits: Vec<usize> = (0..record.options.len()).filter(|&i| contains_words(&hay, &record.options[i].text)).collect();
    // drop hits that are only part of a longer hit ("shelf" in "shelf and wall")
    let maximal: Vec<usize> = hits
        .iter()
        .copied()
        .filter(|&i| {
            !hits.iter().any(|&j| {
                j != i && contains_words(&words(&record.options[j].text), &record.options[i].text)
            })
        })
        .collect();
    match maximal.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

fn yes_no(text: &str) -> Option<usize> {
    let ws = words(text);
    match ws.first().map(String::as_str) {
        Some("yes") => return Some(0),
        Some("no") => return Some(1),
        _ => {}
    }
    let yes = ws.iter().any(|w| w == "yes");
    let no = ws.iter().any(|w| w == "no");
    match (yes, no) {
        (true, false) => Some(0),
        (false, true) => Some(1),
        _ => None,
    }
}

fn extract_from(text: &str, record: &QuestionRecord) -> Option<usize> {
    match record.format {
        AnswerFormat::Mcq => {
            letter_choice(text)
                .map(|letter| (letter as u8 - b'A') as usize)
                .filter(|&i| i < record.options.len())
                .or_else(|| option_text_match(text, record))
        }
        AnswerFormat::Binary => yes_no(text),
    }
}

/// Final-answer line first, then letter patterns, option text and yes/no
/// keywords over the whole response.
pub fn parse_final_answer(response: &str, record: &QuestionRecord) -> ExtractedAnswer {
    let from_final = FINAL_LINE
        .captures_iter(response)
        .last()
        .and_then(|c| extract_from(c.get(1).map_or("", |m| m.as_str()), record));
    match from_final.or_else(|| extract_from(response, record)) {
        Some(i) => ExtractedAnswer::Option(i),
        None => ExtractedAnswer::Unparseable,
    }
}
