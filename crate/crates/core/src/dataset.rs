//! Line-delimited record files, corpus statistics and test-set sampling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::TemplateKind;
use crate::oracle::{AnswerFormat, Rung, TaskKind};
use crate::record::QuestionRecord;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("task {task}: {available} records available, {requested} requested")]
    InsufficientRecords { task: TaskKind, available: usize, requested: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

/// Writes one JSON record per line.
pub fn write_records<W: Write>(records: &[QuestionRecord], mut out: W) -> std::io::Result<usize> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}

pub fn write_dataset(records: &[QuestionRecord], path: &Path) -> Result<usize, DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_records(records, BufWriter::new(file)).map_err(io_err(path))
}

/// Parses and validates every line; blank lines are skipped.
pub fn read_records<R: Read>(input: R) -> Result<Vec<QuestionRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::SchemaViolation { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord = serde_json::from_str(&line)
            .map_err(|e| DatasetError::SchemaViolation { line: line_no, message: e.to_string() })?;
        record
            .validate()
            .map_err(|e| DatasetError::SchemaViolation { line: line_no, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<QuestionRecord>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_records(file)
}

/// Whitespace-delimited token count.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean_question_tokens: f64,
    /// Mean gold-option length over multiple-choice records; absent when
    /// the group has none.
    pub mean_answer_tokens: Option<f64>,
}

#[derive(Default)]
struct Accumulator {
    count: usize,
    question_tokens: usize,
    answers: usize,
    answer_tokens: usize,
}

impl Accumulator {
    fn add(&mut self, r: &QuestionRecord) {
        self.count += 1;
        self.question_tokens += token_count(&r.question);
        if r.format == AnswerFormat::Mcq {
            self.answers += 1;
            self.answer_tokens += token_count(r.gold_text());
        }
    }

    fn finish(&self) -> GroupStats {
        GroupStats {
            count: self.count,
            mean_question_tokens: if self.count == 0 { 0.0 } else { self.question_tokens as f64 / self.count as f64 },
            mean_answer_tokens: (self.answers > 0).then(|| self.answer_tokens as f64 / self.answers as f64),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: GroupStats,
    /// Every task appears, including empty ones.
    pub by_task: BTreeMap<TaskKind, GroupStats>,
    pub by_rung: BTreeMap<Rung, GroupStats>,
    pub by_format: BTreeMap<AnswerFormat, GroupStats>,
    /// Record counts per graph kind and task.
    pub by_graph: BTreeMap<TemplateKind, BTreeMap<TaskKind, usize>>,
}

pub fn compute_stats(records: &[QuestionRecord]) -> DatasetStats {
    let mut total = Accumulator::default();
    let mut tasks: BTreeMap<TaskKind, Accumulator> = TaskKind::ALL.iter().map(|&t| (t, Accumulator::default())).collect();
    let mut rungs: BTreeMap<Rung, Accumulator> = Rung::ALL.iter().map(|&r| (r, Accumulator::default())).collect();
    let mut formats: BTreeMap<AnswerFormat, Accumulator> =
        [AnswerFormat::Mcq, AnswerFormat::Binary].iter().map(|&f| (f, Accumulator::default())).collect();
    let mut by_graph: BTreeMap<TemplateKind, BTreeMap<TaskKind, usize>> = TemplateKind::ALL
        .iter()
        .map(|&k| (k, TaskKind::for_kind(k).iter().map(|&t| (t, 0)).collect()))
        .collect();
    for r in records {
        total.add(r);
        tasks.entry(r.task).or_default().add(r);
        rungs.entry(r.rung).or_default().add(r);
        formats.entry(r.format).or_default().add(r);
        *by_graph.entry(r.graph_kind).or_default().entry(r.task).or_default() += 1;
    }
    DatasetStats {
        total: total.finish(),
        by_task: tasks.into_iter().map(|(k, a)| (k, a.finish())).collect(),
        by_rung: rungs.into_iter().map(|(k, a)| (k, a.finish())).collect(),
        by_format: formats.into_iter().map(|(k, a)| (k, a.finish())).collect(),
        by_graph,
    }
}

impl DatasetStats {
    /// Plain-text table grouped by rung, then a graph-kind breakdown.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let answer = |g: &GroupStats| g.mean_answer_tokens.map_or("-".to_string(), |a| format!("{a:.1}"));
        let _ = writeln!(out, "{:<16} {:<6} {:>8} {:>10} {:>10}", "rung", "task", "count", "q_len", "a_len");
        for rung in Rung::ALL {
            for task in rung.tasks() {
                let g = &self.by_task[&task];
                let _ = writeln!(
                    out,
                    "{:<16} {:<6} {:>8} {:>10.1} {:>10}",
                    rung.as_str(),
                    task.code(),
                    g.count,
                    g.mean_question_tokens,
                    answer(g)
                );
            }
            let g = &self.by_rung[&rung];
            let _ = writeln!(out, "{:<16} {:<6} {:>8} {:>10.1} {:>10}", rung.as_str(), "all", g.count, g.mean_question_tokens, answer(g));
        }
        let t = &self.total;
        let _ = writeln!(out, "{:<16} {:<6} {:>8} {:>10.1} {:>10}", "total", "", t.count, t.mean_question_tokens, answer(t));
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:<6} {:>8}", "graph", "task", "count");
        for (kind, tasks) in &self.by_graph {
            for (task, n) in tasks {
                let _ = writeln!(out, "{:<12} {:<6} {:>8}", kind.as_str(), task.code(), n);
            }
        }
        out
    }
}

/// Exactly `per_task` records of each of the twelve tasks, drawn uniformly
/// without replacement. Output is grouped by task and keeps corpus order
/// within a task.
pub fn sample_test_set(records: &[QuestionRecord], per_task: usize, seed: u64) -> Result<Vec<QuestionRecord>, DatasetError> {
    let mut out = Vec::with_capacity(per_task * TaskKind::ALL.len());
    for task in TaskKind::ALL {
        let pool: Vec<&QuestionRecord> = records.iter().filter(|r| r.task == task).collect();
        if pool.len() < per_task {
            return Err(DatasetError::InsufficientRecords { task, available: pool.len(), requested: per_task });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, task.code()));
        let mut picked = index::sample(&mut rng, pool.len(), per_task).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    Ok(out)
}
