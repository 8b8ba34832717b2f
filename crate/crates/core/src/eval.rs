//! Model evaluation: concurrent runner, answer scoring, error taxonomy,
//! random baselines and cross-model task correlations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, ModelClient};
use crate::cot::{build_direct_prompt, build_prompt, letter_choice, option_letter, parse_final_answer, PromptPlan};
use crate::extract::TemplateKind;
use crate::oracle::{AnswerFormat, Rung, TaskKind};
use crate::record::QuestionRecord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("task correlation needs at least 3 model reports, got {0}")]
    InsufficientModels(usize),
    #[error("{records} records but {outcomes} outcomes")]
    LengthMismatch { records: usize, outcomes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    /// A valid option, but the wrong one.
    Mischosen,
    /// A confident answer that is not among the options.
    #[serde(rename = "OOD")]
    Ood,
    /// No choice could be extracted.
    Unformatted,
    /// The model declined to commit.
    Uncertain,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 4] = [ErrorKind::Mischosen, ErrorKind::Ood, ErrorKind::Unformatted, ErrorKind::Uncertain];

    pub fn label(self) -> &'static str {
        match self {
            ErrorKind::Mischosen => "Mischosen",
            ErrorKind::Ood => "OOD",
            ErrorKind::Unformatted => "Unformatted",
            ErrorKind::Uncertain => "Uncertain",
        }
    }
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub record_id: String,
    pub raw: String,
    /// Extracted option index.
    pub extracted: Option<usize>,
    pub correct: bool,
    pub error: Option<ErrorKind>,
    /// Transport error when every attempt failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

const UNCERTAIN_PHRASES: &[&str] = &[
    "i don't know",
    "i do not know",
    "i don’t know",
    "not sure",
    "unsure",
    "cannot determine",
    "can't determine",
    "cannot be determined",
    "unable to determine",
    "unable to tell",
    "cannot tell",
    "can't tell",
    "impossible to tell",
    "impossible to determine",
    "no way to know",
    "not enough information",
    "insufficient information",
    "uncertain",
];

fn is_uncertain(text: &str) -> bool {
    let lower = text.to_lowercase();
    UNCERTAIN_PHRASES.iter().any(|p| lower.contains(p))
}

/// Short alphabetic answer, or a letter naming no option.
fn is_out_of_options(text: &str, record: &QuestionRecord) -> bool {
    if record.format == AnswerFormat::Mcq {
        if let Some(letter) = letter_choice(text) {
            if (letter as u8 - b'A') as usize >= record.options.len() {
                return true;
            }
        }
    }
    let body = text
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim();
    let body = body
        .strip_prefix("Final answer:")
        .or_else(|| body.strip_prefix("final answer:"))
        .unwrap_or(body);
    let words: Vec<&str> = body
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect();
    (1..=6).contains(&words.len()) && words.iter().all(|w| w.chars().all(char::is_alphabetic))
}

/// Scores a response. Returns the extracted option and the error kind,
/// `None` when correct.
pub fn classify_response(raw: &str, record: &QuestionRecord) -> (Option<usize>, Option<ErrorKind>) {
    let extracted = parse_final_answer(raw, record).index();
    if extracted.is_some() && extracted == record.gold_index() {
        return (extracted, None);
    }
    let kind = if is_uncertain(raw) {
        ErrorKind::Uncertain
    } else if extracted.is_none() && is_out_of_options(raw, record) {
        ErrorKind::Ood
    } else if extracted.is_none() {
        ErrorKind::Unformatted
    } else {
        ErrorKind::Mischosen
    };
    (extracted, Some(kind))
}

pub fn classify_error(raw: &str, record: &QuestionRecord) -> Option<ErrorKind> {
    classify_response(raw, record).1
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub parallelism: usize,
    pub retries: u32,
    /// First retry delay; doubles each attempt.
    pub backoff: Duration,
    /// Per-attempt limit; the client's own timeout when unset.
    pub timeout: Option<Duration>,
    /// Reasoning plan; a direct prompt when unset.
    pub plan: Option<PromptPlan>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            parallelism: 4,
            retries: 2,
            backoff: Duration::from_millis(200),
            timeout: None,
            plan: Some(PromptPlan::full()),
        }
    }
}

pub fn render_prompt(record: &QuestionRecord, plan: Option<&PromptPlan>) -> String {
    match plan {
        Some(p) => build_prompt(record, p),
        None => build_direct_prompt(record),
    }
}

fn call_with_timeout(
    client: &Arc<dyn ModelClient>,
    prompt: &str,
    image: &str,
    timeout: Duration,
) -> Result<String, ClientError> {
    let (tx, rx) = mpsc::channel();
    let c = Arc::clone(client);
    let (prompt, image) = (prompt.to_string(), image.to_string());
    thread::spawn(move || {
        let _ = tx.send(c.generate(&prompt, Some(&image)));
    });
    match rx.recv_timeout(timeout) {
        Ok(r) => r,
        Err(mpsc::RecvTimeoutError::Timeout) => Err(ClientError::Timeout(timeout)),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err(ClientError::Transport("client thread panicked".into())),
    }
}

fn evaluate_one(record: &QuestionRecord, client: &Arc<dyn ModelClient>, config: &EvalConfig) -> EvalOutcome {
    let prompt = render_prompt(record, config.plan.as_ref());
    let timeout = config.timeout.unwrap_or_else(|| client.timeout());
    let mut delay = config.backoff;
    let mut attempt = 0;
    let response = loop {
        match call_with_timeout(client, &prompt, record.image_id.as_str(), timeout) {
            Ok(text) => break Ok(text),
            Err(e) if attempt < config.retries => {
                log::debug!("{}: attempt {} failed: {e}", record.id, attempt + 1);
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            Err(e) => break Err(e),
        }
    };
    match response {
        Ok(raw) => {
            let (extracted, error) = classify_response(&raw, record);
            EvalOutcome { record_id: record.id.clone(), raw, extracted, correct: error.is_none(), error, failure: None }
        }
        Err(e) => {
            log::warn!("{}: giving up after {} attempts: {e}", record.id, attempt + 1);
            EvalOutcome {
                record_id: record.id.clone(),
                raw: String::new(),
                extracted: None,
                correct: false,
                error: Some(ErrorKind::Unformatted),
                failure: Some(e.to_string()),
            }
        }
    }
}

/// Runs `client` over `records` with at most `parallelism` requests in
/// flight. Outcomes come back in record order.
pub fn run_eval(records: &[QuestionRecord], client: Arc<dyn ModelClient>, config: &EvalConfig) -> Vec<EvalOutcome> {
    let workers = config.parallelism.max(1).min(records.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<EvalOutcome>>> = records.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(record) = records.get(i) else { break };
                let outcome = evaluate_one(record, &client, config);
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every record evaluated"))
        .collect()
}

/// Answers each known prompt with its gold option.
pub struct GoldStub {
    answers: HashMap<String, String>,
}

impl GoldStub {
    pub fn new(records: &[QuestionRecord], plan: Option<&PromptPlan>) -> Self {
        let answers = records
            .iter()
            .map(|r| {
                let answer = match r.format {
                    AnswerFormat::Mcq => format!("Final answer: ({})", option_letter(r.gold_index().unwrap_or(0))),
                    AnswerFormat::Binary => format!("Final answer: {}", r.gold_text()),
                };
                (render_prompt(r, plan), answer)
            })
            .collect();
        GoldStub { answers }
    }
}

impl ModelClient for GoldStub {
    fn name(&self) -> &str {
        "stub-gold"
    }

    fn generate(&self, prompt: &str, _image_ref: Option<&str>) -> Result<String, ClientError> {
        self.answers.get(prompt).cloned().ok_or_else(|| ClientError::Transport("prompt not in the stub's dataset".into()))
    }
}

/// Replies with the same text to every prompt.
pub struct ConstantStub {
    name: String,
    reply: String,
}

impl ConstantStub {
    pub fn new(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        ConstantStub { name: format!("stub-constant({reply})"), reply }
    }
}

impl ModelClient for ConstantStub {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, _prompt: &str, _image_ref: Option<&str>) -> Result<String, ClientError> {
        Ok(self.reply.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub errors: BTreeMap<ErrorKind, usize>,
}

impl Score {
    fn add(&mut self, o: &EvalOutcome) {
        self.total += 1;
        if o.correct {
            self.correct += 1;
        }
        if let Some(e) = o.error {
            *self.errors.entry(e).or_default() += 1;
        }
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub by_task: BTreeMap<TaskKind, f64>,
    pub by_rung: BTreeMap<Rung, f64>,
    pub binary: f64,
    pub mcq: f64,
    pub all: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Chance accuracy: 1/|options| per task (averaged over its records, or
/// the task's nominal arity when it has none); other cells are unweighted
/// means over tasks.
pub fn random_baseline(records: &[QuestionRecord]) -> BaselineRow {
    let by_task: BTreeMap<TaskKind, f64> = TaskKind::ALL
        .iter()
        .map(|&t| {
            let chances: Vec<f64> = records
                .iter()
                .filter(|r| r.task == t && !r.options.is_empty())
                .map(|r| 1.0 / r.options.len() as f64)
                .collect();
            let nominal = match t.format() {
                AnswerFormat::Mcq => 1.0 / crate::record::MCQ_OPTIONS as f64,
                AnswerFormat::Binary => 0.5,
            };
            (t, if chances.is_empty() { nominal } else { mean(chances) })
        })
        .collect();
    let by_rung = Rung::ALL.iter().map(|&r| (r, mean(r.tasks().map(|t| by_task[&t])))).collect();
    let of_format = |f: AnswerFormat| mean(TaskKind::ALL.iter().filter(|t| t.format() == f).map(|t| by_task[t]));
    BaselineRow {
        binary: of_format(AnswerFormat::Binary),
        mcq: of_format(AnswerFormat::Mcq),
        all: mean(by_task.values().copied()),
        by_rung,
        by_task,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model: String,
    pub overall: Score,
    pub by_task: BTreeMap<TaskKind, Score>,
    pub by_rung: BTreeMap<Rung, Score>,
    pub by_graph: BTreeMap<TemplateKind, Score>,
    pub by_format: BTreeMap<AnswerFormat, Score>,
    pub baseline: BaselineRow,
}

/// Record-weighted accuracy and error counts per key.
pub fn score(model: &str, records: &[QuestionRecord], outcomes: &[EvalOutcome]) -> Result<ScoreReport, EvalError> {
    if records.len() != outcomes.len() {
        return Err(EvalError::LengthMismatch { records: records.len(), outcomes: outcomes.len() });
    }
    let mut report = ScoreReport { model: model.to_string(), baseline: random_baseline(records), ..Default::default() };
    for (r, o) in records.iter().zip(outcomes) {
        report.overall.add(o);
        report.by_task.entry(r.task).or_default().add(o);
        report.by_rung.entry(r.rung).or_default().add(o);
        report.by_graph.entry(r.graph_kind).or_default().add(o);
        report.by_format.entry(r.format).or_default().add(o);
    }
    Ok(report)
}

impl ScoreReport {
    pub fn task_accuracy(&self, task: TaskKind) -> Option<f64> {
        self.by_task.get(&task).filter(|s| s.total > 0).map(|s| s.accuracy)
    }

    /// Plain-text summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.model);
        let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>8}", "key", "n", "acc", "random");
        let row = |out: &mut String, key: &str, s: &Score, random: Option<f64>| {
            let r = random.map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(out, "{:<16} {:>8} {:>8.2} {:>8}", key, s.total, s.accuracy, r);
        };
        for (t, s) in &self.by_task {
            row(&mut out, t.code(), s, self.baseline.by_task.get(t).copied());
        }
        for (r, s) in &self.by_rung {
            row(&mut out, r.as_str(), s, self.baseline.by_rung.get(r).copied());
        }
        for (k, s) in &self.by_graph {
            row(&mut out, k.as_str(), s, None);
        }
        for (f, s) in &self.by_format {
            let (key, random) = match f {
                AnswerFormat::Binary => ("BIN", self.baseline.binary),
                AnswerFormat::Mcq => ("MCQ", self.baseline.mcq),
            };
            row(&mut out, key, s, Some(random));
        }
        row(&mut out, "ALL", &self.overall, Some(self.baseline.all));
        let _ = writeln!(out);
        let _ = writeln!(out, "errors:");
        for kind in ErrorKind::ALL {
            let _ = writeln!(out, "  {:<12} {}", kind.label(), self.overall.errors.get(&kind).copied().unwrap_or(0));
        }
        out
    }
}

/// Pearson correlation; NaN when either side has no variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if n == 0 || constant(&xs[..n]) || constant(&ys[..n]) {
        return f64::NAN;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub tasks: Vec<TaskKind>,
    /// Row-major, `tasks.len()` squared.
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: TaskKind, b: TaskKind) -> f64 {
        let i = self.tasks.iter().position(|&t| t == a).expect("known task");
        let j = self.tasks.iter().position(|&t| t == b).expect("known task");
        self.values[i][j]
    }
}

/// Correlation across models of every task pair's accuracies. Tasks a
/// model has no records for count as NaN.
pub fn task_correlation(reports: &[ScoreReport]) -> Result<CorrelationMatrix, EvalError> {
    if reports.len() < 3 {
        return Err(EvalError::InsufficientModels(reports.len()));
    }
    let tasks = TaskKind::ALL.to_vec();
    let vectors: Vec<Vec<f64>> = tasks
        .iter()
        .map(|&t| reports.iter().map(|r| r.task_accuracy(t).unwrap_or(f64::NAN)).collect())
        .collect();
    let values = (0..tasks.len())
        .map(|i| (0..tasks.len()).map(|j| if i == j { 1.0 } else { pearson(&vectors[i], &vectors[j]) }).collect())
        .collect();
    Ok(CorrelationMatrix { tasks, values })
}
