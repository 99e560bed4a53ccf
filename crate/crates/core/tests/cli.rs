use std::path::Path;
use std::process::{Command, Output};

fn convsdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convsdg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fixture_pipeline_resume_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = ok(convsdg(&["make-fixture", "--out", s(&data)]));
    let config = config.trim();
    let ws = dir.path().join("ws");

    let manifest: serde_json::Value =
        serde_json::from_str(&ok(convsdg(&["--config", config, "--workspace", s(&ws), "pipeline"]))).unwrap();
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 5);

    let resumed: serde_json::Value =
        serde_json::from_str(&ok(convsdg(&["--config", config, "--workspace", s(&ws), "--resume", "pipeline"]))).unwrap();
    assert_eq!(resumed["executed"].as_array().unwrap().len(), 0);

    let zero_shot = dir.path().join("zs.trec");
    ok(convsdg(&["--config", config, "--workspace", s(&ws), "retrieve", "--out", s(&zero_shot)]));
    let eval = ok(convsdg(&[
        "--config",
        config,
        "--workspace",
        s(&ws),
        "evaluate",
        "--metrics",
        "mrr,ndcg@3",
        "--compare",
        s(&zero_shot),
    ]));
    let lines: Vec<&str> = eval.lines().collect();
    assert_eq!(lines[0], "query_id\tmrr\tndcg@3");
    assert_eq!(lines.len(), 1 + 160 + 1 + 1 + 2);
    assert!(lines[161].starts_with("all\t"));
    assert!(lines[163].starts_with("mrr\t"));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = ok(convsdg(&["make-fixture", "--out", s(&data)]));
    let config = config.trim();
    let ws = dir.path().join("ws");
    let base = ["--config", config, "--workspace", s(&ws), "--seed", "3"];
    let run = |extra: &[&str]| ok(convsdg(&[&base[..], extra].concat()));
    let report: serde_json::Value = serde_json::from_str(&run(&["generate-dialogue", "--sessions-per-topic", "1", "--turns", "4"])).unwrap();
    assert_eq!(report["produced"], 20);
    run(&["build-supervision", "--form", "cqat"]);
    run(&["train", "--epochs", "2"]);
    run(&["retrieve", "--encoder", s(&ws.join("query_encoder.bin")), "--mode", "ann", "--k", "10"]);
    let run_file = std::fs::read_to_string(ws.join("run.trec")).unwrap();
    assert_eq!(run_file.lines().count(), 160 * 10);
    run(&["evaluate", "--rel-threshold", "2", "--per-query", s(&dir.path().join("pq.tsv"))]);
    let aug: serde_json::Value = serde_json::from_str(&run(&["augment-queries", "--t", "1"])).unwrap();
    assert_eq!(aug["samples"], 160);
    assert!(ws.join("train_sessions.jsonl").is_file());

    let pseudo = dir.path().join("pseudo.txt");
    run(&["build-supervision", "--form", "qa", "--top-k", "4", "--m", "2", "--out-qrels", s(&pseudo)]);
    let labels = std::fs::read_to_string(&pseudo).unwrap();
    assert_eq!(labels.lines().count(), 80 * 2);
    let encoder = dir.path().join("enc.bin");
    run(&["train", "--qrels", s(&pseudo), "--lr", "0.05", "--epochs", "1", "--out-encoder", s(&encoder)]);
    assert!(encoder.is_file());
    let bm25 = dir.path().join("bm25.trec");
    run(&["retrieve", "--mode", "bm25", "--k", "5", "--out-run", s(&bm25)]);
    let bm25_run = std::fs::read_to_string(&bm25).unwrap();
    assert_eq!(bm25_run.lines().count(), 160 * 5);
    assert!(bm25_run.lines().all(|l| l.ends_with("bm25")));
    let merged = dir.path().join("merged.jsonl");
    run(&["augment-queries", "--t", "2", "--out-sessions", s(&merged), "--out-qrels", s(&dir.path().join("merged.txt"))]);
    assert!(merged.is_file());
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = convsdg(&["--config", s(&dir.path().join("nope.toml")), "pipeline"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "scenario = \"dialogue_unsupervised\"\n").unwrap();
    let out = convsdg(&["--config", s(&cfg), "pipeline"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.collection"));
    assert!(!dir.path().join("workspace").exists());
}
