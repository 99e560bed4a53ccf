mod common;

use std::fs;

use convsdg::pipeline::{
    run_data_size_ablation, run_pipeline, run_query_form_ablation, sha256_file, Layout, PipelineConfig, Scenario,
};
use convsdg::Error;

fn report(cfg: &PipelineConfig) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(Layout::new(&cfg.workspace).report()).unwrap()).unwrap()
}

#[test]
fn dialogue_pipeline_manifest_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = common::fixture_config(dir.path(), "ws");
    let manifest = run_pipeline(&cfg).unwrap();
    assert_eq!(manifest.executed, ["generate", "supervise", "train", "retrieve", "evaluate"]);
    assert_eq!(manifest.artifacts.len(), 5);
    for a in &manifest.artifacts {
        assert_eq!(a.sha256, sha256_file(&cfg.workspace.join(&a.path)).unwrap());
    }
    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Layout::new(&cfg.workspace).manifest()).unwrap()).unwrap();
    assert_eq!(on_disk["artifacts"].as_array().unwrap().len(), 5);

    let r = report(&cfg);
    assert_eq!(r["queries"], 160);
    assert!(r["fine_tuned"]["mrr"].as_f64().unwrap() > r["zero_shot"]["mrr"].as_f64().unwrap());

    let mut again = cfg.clone();
    again.resume = true;
    let resumed = run_pipeline(&again).unwrap();
    assert!(resumed.executed.is_empty());
    assert_eq!(resumed.skipped.len(), 5);
    assert_eq!(resumed.artifacts, manifest.artifacts);

    // losing an intermediate artifact reruns it and everything after it
    fs::remove_file(Layout::new(&cfg.workspace).encoder()).unwrap();
    let partial = run_pipeline(&again).unwrap();
    assert_eq!(partial.skipped, ["generate", "supervise"]);
    assert_eq!(partial.executed, ["train", "retrieve", "evaluate"]);
    assert_eq!(partial.artifacts, manifest.artifacts);
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = common::fixture_config(dir.path(), "a");
    let (_, b) = common::fixture_config(dir.path(), "b");
    let ma = run_pipeline(&a).unwrap();
    let mb = run_pipeline(&b).unwrap();
    assert_eq!(ma.artifacts, mb.artifacts);
    let mut c = a.clone();
    c.workspace = dir.path().join("c");
    c.seed += 1;
    let mc = run_pipeline(&c).unwrap();
    assert_ne!(ma.artifacts[0].sha256, mc.artifacts[0].sha256);
}

#[test]
fn validation_happens_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = common::fixture_config(dir.path(), "ws");
    cfg.data.collection = None;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("data.collection")), "{err}");
    assert!(!cfg.workspace.exists());

    cfg.data.collection = Some(dir.path().join("missing.tsv"));
    assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
    assert!(!cfg.workspace.exists());

    let (_, mut semi) = common::fixture_config(dir.path(), "ws");
    semi.scenario = Scenario::QuerySemisupervised;
    semi.data.train_qrels = None;
    assert!(matches!(run_pipeline(&semi), Err(Error::Config(ref m)) if m.contains("train_qrels")));
}

#[test]
fn stage_errors_name_the_stage_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, mut cfg) = common::fixture_config(dir.path(), "ws");
    let bad = dir.path().join("bad_topics.jsonl");
    fs::write(&bad, "{not json\n").unwrap();
    cfg.data.topics = Some(bad.clone());
    match run_pipeline(&cfg).unwrap_err() {
        Error::Stage { stage, inputs, source } => {
            assert_eq!(stage, "generate");
            assert!(inputs.contains("bad_topics.jsonl"));
            assert!(matches!(*source, Error::Format { line: 1, .. }));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(paths.topics.is_file());
}

#[test]
fn semisupervised_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, mut cfg) = common::fixture_config(dir.path(), "ws");
    cfg.scenario = Scenario::QuerySemisupervised;
    let manifest = run_pipeline(&cfg).unwrap();
    assert_eq!(manifest.executed, ["augment", "merge", "train", "retrieve", "evaluate"]);
    assert_eq!(manifest.artifacts.len(), 7);
    let original = convsdg::datamodel::read_sessions(&paths.train_sessions).unwrap();
    let merged = convsdg::datamodel::read_sessions(Layout::new(&cfg.workspace).merged_sessions()).unwrap();
    let turns: usize = original.iter().map(|s| s.turns.len()).sum();
    assert_eq!(convsdg::query_aug::sample_ids(&merged).len(), 3 * turns);
    let r = report(&cfg);
    assert!(r["fine_tuned"]["mrr"].as_f64().unwrap() > r["zero_shot"]["mrr"].as_f64().unwrap());
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn size_ablation_shape_and_full_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = common::fixture_config(dir.path(), "ws");
    let csv = run_data_size_ablation(&cfg, &[1.0, 0.25, 0.75, 0.5], None).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "fraction,mrr,ndcg@3,recall@100");
    let rows = rows(&csv);
    let fractions: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(fractions, ["0.25", "0.50", "0.75", "1.00"]);
    assert_eq!(fs::read_to_string(cfg.workspace.join("ablation_size.csv")).unwrap(), csv);

    // the 1.00 row is the plain pipeline run on the same workspace
    let mut full = cfg.clone();
    full.resume = true;
    run_pipeline(&full).unwrap();
    let v = report(&full);
    let expected: Vec<String> = ["mrr", "ndcg@3", "recall@100"]
        .iter()
        .map(|m| format!("{:.6}", v["fine_tuned"][*m].as_f64().unwrap()))
        .collect();
    assert_eq!(rows[3][1..], expected[..]);

    assert!(run_data_size_ablation(&cfg, &[0.0, 0.5], None).is_err());
    assert!(run_data_size_ablation(&cfg, &[1.2], None).is_err());
}

#[test]
fn form_ablation_rows_and_plumbing() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = common::fixture_config(dir.path(), "ws");
    let csv = run_query_form_ablation(&cfg, None).unwrap();
    let rows = rows(&csv);
    let forms: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(forms, ["qa", "qat", "cqt", "cqat"]);

    // the configured form (qat) reproduces the pipeline's own evaluation
    let mut full = cfg.clone();
    full.resume = true;
    run_pipeline(&full).unwrap();
    let v = report(&full);
    let expected: Vec<String> = ["mrr", "ndcg@3", "recall@100"]
        .iter()
        .map(|m| format!("{:.6}", v["fine_tuned"][*m].as_f64().unwrap()))
        .collect();
    assert_eq!(rows[1][1..], expected[..]);
}
