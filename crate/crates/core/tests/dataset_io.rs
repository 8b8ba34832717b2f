mod common;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scenecause_core::dataset::{compute_stats, read_dataset, read_records, write_dataset, DatasetError};
use scenecause_core::extract::{build_causal_edges, match_templates, PredicateLexicon, Role, TemplateKind};
use scenecause_core::generate::QuestionGenerator;
use scenecause_core::oracle::{AnswerFormat, Rung, TaskKind};
use scenecause_core::record::{AnswerOption, Provenance, QuestionRecord};
use scenecause_core::scene::{parse_scene_graph, HumanLexicon};

const ACCENTED: &str = r#"{"image_id": "café-9",
    "objects": [{"object_id": 1, "names": ["mur"]}, {"object_id": 2, "names": ["étagère"]},
                {"object_id": 3, "names": ["livres"]}, {"object_id": 4, "names": ["fenêtre"]}],
    "relationships": [{"subject_id": 2, "predicate": "fixed to", "object_id": 1},
                      {"subject_id": 3, "predicate": "on", "object_id": 2},
                      {"subject_id": 3, "predicate": "leaning on", "object_id": 1}]}"#;

fn shelf_records() -> Vec<QuestionRecord> {
    let scene = common::shelf_scene();
    QuestionGenerator::default().generate_scene(&scene, &PredicateLexicon::default(), 3).records
}

#[test]
fn round_trip_preserves_records() {
    let scene = parse_scene_graph(ACCENTED, &HumanLexicon::default()).unwrap();
    let mut records = QuestionGenerator::default().generate_scene(&scene, &PredicateLexicon::default(), 11).records;
    records.extend(shelf_records());
    assert!(records.iter().any(|r| r.question.contains("étagère")));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.jsonl");
    assert_eq!(write_dataset(&records, &path).unwrap(), records.len());
    assert_eq!(read_dataset(&path).unwrap(), records);
}

#[test]
fn five_options_rejected_with_line_number() {
    let mut records = shelf_records();
    let i = records.iter().position(|r| r.format == AnswerFormat::Mcq).unwrap();
    records[i].options.push(AnswerOption::new("glue", Provenance::Text));
    let mut text = Vec::new();
    scenecause_core::dataset::write_records(&records, &mut text).unwrap();
    match read_records(text.as_slice()) {
        Err(DatasetError::SchemaViolation { line, .. }) => assert_eq!(line, i + 1),
        other => panic!("expected schema violation, got {other:?}"),
    }
}

#[test]
fn truncated_last_line_is_reported() {
    let records = shelf_records();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.jsonl");
    write_dataset(&records, &path).unwrap();
    let full = std::fs::read_to_string(&path).unwrap();
    let cut = &full[..full.len() - 20];
    std::fs::File::create(&path).unwrap().write_all(cut.as_bytes()).unwrap();
    match read_dataset(&path) {
        Err(DatasetError::SchemaViolation { line, .. }) => assert_eq!(line, records.len()),
        other => panic!("expected schema violation, got {other:?}"),
    }
    assert!(matches!(read_dataset(&dir.path().join("missing.jsonl")), Err(DatasetError::Io { .. })));
}

#[test]
fn stats_fixture() {
    let scene = common::shelf_scene();
    let graph = build_causal_edges(&scene, &PredicateLexicon::default()).graph;
    let m = &match_templates(&graph).unwrap()[0];
    let gen = QuestionGenerator::default();
    let coi = gen.generate_question(&scene, &graph, m, TaskKind::Coi, &[Role::Y], None, 1).unwrap().record;
    let [sc_yes, sc_no] = gen.make_binary_pair(&scene, &graph, m, TaskKind::Sc, &[Role::W, Role::Y], 1).unwrap();
    let bas = gen.generate_question(&scene, &graph, m, TaskKind::Bas, &[Role::M, Role::Y], None, 1).unwrap().record;
    let records = vec![coi.clone(), sc_yes.record, sc_no.record, bas];
    let stats = compute_stats(&records);
    assert_eq!(stats.total.count, 4);
    assert_eq!(stats.by_task[&TaskKind::Sc].count, 2);
    assert_eq!(stats.by_task[&TaskKind::Coi].count, 1);
    assert_eq!(stats.by_task[&TaskKind::Nc].count, 0);
    assert_eq!(stats.by_rung[&Rung::Counterfactual].count, 2);
    assert_eq!(stats.by_format[&AnswerFormat::Binary].count, 2);
    assert_eq!(stats.by_graph[&TemplateKind::Confounding][&TaskKind::Sc], 2);
    // "Why are the books placed steadily?" and "shelf and wall"
    assert_eq!(stats.by_task[&TaskKind::Coi].mean_question_tokens, 6.0);
    assert_eq!(stats.by_task[&TaskKind::Coi].mean_answer_tokens, Some(3.0));
    assert_eq!(stats.by_task[&TaskKind::Sc].mean_answer_tokens, None);
    assert_eq!(coi.question, "Why are the books placed steadily?");
}

#[test]
fn stats_ignore_record_order() {
    let scenes = common::synthetic_scenes(5, 40);
    let mut records = QuestionGenerator::default().generate_corpus(&scenes, &PredicateLexicon::default(), 5).records;
    let before = compute_stats(&records);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        records.shuffle(&mut rng);
        assert_eq!(compute_stats(&records), before);
    }
}
