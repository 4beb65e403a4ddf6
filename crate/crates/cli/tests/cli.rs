use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depscreen_core::{synthetic, TaskKind};

fn depscreen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depscreen")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, task: TaskKind) -> PathBuf {
    let mut cfg = synthetic::offline_config(dir, task, 15, 9).unwrap();
    cfg.train.n_trees = 15;
    cfg.cache.embeddings = Some(dir.join("cache/embeddings.jsonl"));
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TaskKind::Severity);
    let config = config.to_str().unwrap();
    let mut metrics = Vec::new();
    for method in ["logistic_regression", "random_forest"] {
        let out_dir = dir.path().join(method);
        let o = depscreen(&["run", "--config", config, "--offline", "--method", method, "--output", out_dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("accuracy"));
        metrics.push(out_dir.join("metrics.json"));
    }
    let o = depscreen(&["compare", metrics[0].to_str().unwrap(), metrics[1].to_str().unwrap()]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert!(csv.starts_with("rank,model,accuracy,macro_f1,weighted_f1,f1_Minimum,f1_Mild,f1_Moderate,f1_Severe\n"), "{csv}");
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn ingest_writes_the_split_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TaskKind::Binary);
    let corpus = dir.path().join("corpus.jsonl");
    let o = depscreen(&["ingest", "--config", config.to_str().unwrap(), "--corpus", corpus.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let mapped = summary["counts"]["mapped"].as_u64().unwrap();
    assert_eq!(mapped, 30);
    assert_eq!(std::fs::read_to_string(&corpus).unwrap().lines().count() as u64, mapped);
}

#[test]
fn cache_inspect_and_clear() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TaskKind::Binary);
    let config = config.to_str().unwrap();
    assert!(depscreen(&["run", "--config", config, "--offline"]).status.success());

    let o = depscreen(&["cache", "inspect", "--config", config, "--kind", "embeddings"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["embeddings"]["summary"]["entries"], 30);
    assert!(v.get("llm").is_none());

    let o = depscreen(&["cache", "clear", "--config", config]);
    assert!(stdout(&o).contains("embeddings: removed"));
    assert!(!dir.path().join("cache/embeddings.jsonl").exists());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TaskKind::Binary);
    let config = config.to_str().unwrap();

    // zero-shot without an LLM section is a config error
    assert_eq!(depscreen(&["run", "--config", config, "--method", "zero_shot"]).status.code(), Some(2));
    assert_eq!(depscreen(&["run", "--config", "/nonexistent/run.toml"]).status.code(), Some(2));

    std::fs::remove_file(dir.path().join("data/aita.csv")).unwrap();
    let o = depscreen(&["run", "--config", config, "--offline"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));

    assert_ne!(depscreen(&["run", "--config", config, "--method", "bogus"]).status.code(), Some(0));
}
