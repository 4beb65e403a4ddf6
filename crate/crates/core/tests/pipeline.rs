use std::path::Path;

use depscreen_core::llm::MockFixture;
use depscreen_core::pipeline::{
    compare_models, emit_report, prepare_corpus, run_experiment, FeatureMode, LlmConfig, LlmProviderKind,
    MetricsDocument, Method, PipelineError, RunConfig, EMPTY_SUMMARY_PLACEHOLDER,
};
use depscreen_core::{synthetic, Source, TaskKind};

fn config(dir: &Path, task: TaskKind, per_class: usize) -> RunConfig {
    let mut cfg = synthetic::offline_config(dir, task, per_class, 5).unwrap();
    cfg.train.n_trees = 20;
    cfg
}

fn with_mock(cfg: &mut RunConfig, dir: &Path, fixture: &MockFixture) {
    let path = dir.join("mock.json");
    std::fs::write(&path, serde_json::to_string(fixture).unwrap()).unwrap();
    cfg.llm = Some(LlmConfig { kind: LlmProviderKind::Mock, fixture: Some(path), ..Default::default() });
}

#[test]
fn every_task_and_family_runs_offline() {
    for task in TaskKind::ALL {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synthetic::offline_config(dir.path(), task, 40, 5).unwrap();
        for method in [Method::LogisticRegression, Method::LinearSvm, Method::RandomForest] {
            cfg.method = method;
            cfg.output_dir = dir.path().join(method.to_string());
            let out = run_experiment(&cfg, true).unwrap();
            // the forest samples ~28 of 780 columns per split, mostly stub noise
            let floor = if method == Method::RandomForest { 0.75 } else { 0.9 };
            assert!(out.report.accuracy >= floor, "{task} {method}: {}", out.report.accuracy);
            assert_eq!(out.report.per_class.len(), task.labels().len());
        }
    }
}

#[test]
fn manifest_counts_reconcile() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config(dir.path(), TaskKind::Binary, 30), true).unwrap();
    let c = out.manifest.counts;
    assert!(c.loaded >= c.deduped && c.deduped >= c.filtered && c.filtered >= c.mapped);
    assert_eq!(c.mapped, c.train + c.test);
    let e = out.manifest.embeddings.unwrap();
    assert_eq!(e.stats.fetched + e.stats.cache_hits, e.stats.requested);
    assert_eq!(e.stats.requested, c.mapped);
    assert_eq!(e.dimension, 768);
    assert_eq!(out.predictions.len(), c.test);
    assert_eq!(out.manifest.per_source.len(), Source::ALL.len());
}

#[test]
fn warm_caches_make_no_provider_calls_and_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), TaskKind::Severity, 15);
    cfg.feature_mode = FeatureMode::LlmSummary;
    cfg.cache.embeddings = Some(dir.path().join("cache/embeddings.jsonl"));
    cfg.cache.llm = Some(dir.path().join("cache/llm.jsonl"));
    let prepared = prepare_corpus(&cfg).unwrap();
    let mut fixture = MockFixture::default();
    for ex in prepared.split.train.iter().chain(&prepared.split.test) {
        let prompt = depscreen_core::llm::build_summary_prompt(&ex.post);
        fixture.responses.insert(depscreen_core::llm::prompt_hash(&prompt), format!("The user sounds {}.", ex.label.name()));
    }
    with_mock(&mut cfg, dir.path(), &fixture);

    cfg.output_dir = dir.path().join("cold");
    let cold = run_experiment(&cfg, true).unwrap();
    cfg.output_dir = dir.path().join("warm");
    let warm = run_experiment(&cfg, true).unwrap();

    let (cl, wl) = (cold.manifest.llm.unwrap(), warm.manifest.llm.unwrap());
    assert_eq!(cl.stats.provider_calls, cold.manifest.counts.mapped);
    assert_eq!(wl.stats.provider_calls, 0);
    assert_eq!(wl.stats.cache_hits, wl.stats.requested);
    let we = warm.manifest.embeddings.unwrap();
    assert_eq!(we.stats.cache_hits, we.stats.requested);
    assert_eq!(std::fs::read(&cold.paths.metrics).unwrap(), std::fs::read(&warm.paths.metrics).unwrap());
    assert_eq!(cold.report.accuracy, 1.0);
}

#[test]
fn blank_summaries_get_a_placeholder() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), TaskKind::Binary, 10);
    cfg.feature_mode = FeatureMode::LlmSummary;
    with_mock(&mut cfg, dir.path(), &MockFixture { default: Some("   ".into()), ..Default::default() });
    let out = run_experiment(&cfg, true).unwrap();
    let llm = out.manifest.llm.unwrap();
    assert_eq!(llm.placeholder_summaries, out.manifest.counts.mapped);
    assert_eq!(llm.stats.unparseable, out.manifest.counts.mapped);
    assert!(!EMPTY_SUMMARY_PLACEHOLDER.is_empty());
}

#[test]
fn garbage_zero_shot_answers_are_scored_wrong() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), TaskKind::Binary, 10);
    cfg.method = Method::ZeroShot;
    with_mock(&mut cfg, dir.path(), &MockFixture { default: Some("I am not sure.".into()), ..Default::default() });
    let out = run_experiment(&cfg, true).unwrap();
    assert_eq!(out.report.accuracy, 0.0);
    assert_eq!(out.manifest.unparseable as usize, out.manifest.counts.test);
    assert!(out.model.is_none() && out.manifest.fit.is_none());
}

#[test]
fn missing_mock_answers_fail_with_provider_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), TaskKind::Binary, 10);
    cfg.method = Method::ZeroShot;
    with_mock(&mut cfg, dir.path(), &MockFixture::default());
    let err = run_experiment(&cfg, true).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
    assert!(err.to_string().starts_with("zero_shot stage failed"));
}

#[test]
fn config_and_data_errors_have_their_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), TaskKind::Binary, 10);
    cfg.lexicon = None;
    assert_eq!(run_experiment(&cfg, true).unwrap_err().exit_code(), 2);

    let mut cfg = config(dir.path(), TaskKind::Binary, 10);
    cfg.datasets.remove(&Source::Aita);
    let err = run_experiment(&cfg, true).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("preprocessing"), "{err}");

    let mut cfg = config(dir.path(), TaskKind::Binary, 10);
    cfg.embeddings.kind = depscreen_core::embeddings::ProviderKind::Remote;
    assert_eq!(run_experiment(&cfg, true).unwrap_err().exit_code(), 2);
}

#[test]
fn reports_overwrite_cleanly_and_unwritable_dirs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), TaskKind::Binary, 10);
    let out = run_experiment(&cfg, true).unwrap();
    let again = emit_report(&out.report, &out.manifest, &cfg.output_dir).unwrap();
    assert_eq!(again, out.paths);
    let mut names: Vec<String> = std::fs::read_dir(&cfg.output_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["confusion.csv", "manifest.json", "metrics.json", "per_class_f1.csv"]);
    let _: serde_json::Value = serde_json::from_slice(&std::fs::read(&out.paths.manifest).unwrap()).unwrap();
    MetricsDocument::load(&out.paths.metrics).unwrap();

    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, "x").unwrap();
    let err = emit_report(&out.report, &out.manifest, &blocker.join("sub")).unwrap_err();
    assert!(matches!(err, PipelineError::UnwritableOutput { .. }));
}

#[test]
fn saved_reports_rank_and_refuse_mixed_splits() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), TaskKind::Differential, 15);
    let mut docs = Vec::new();
    for method in [Method::RandomForest, Method::LogisticRegression] {
        cfg.method = method;
        cfg.output_dir = dir.path().join(method.to_string());
        let out = run_experiment(&cfg, true).unwrap();
        docs.push(MetricsDocument::load(&out.paths.metrics).unwrap());
    }
    let ranking = compare_models(&docs).unwrap();
    assert_eq!(ranking.rows.len(), 2);
    assert!(ranking.rows[0].accuracy >= ranking.rows[1].accuracy);
    assert_eq!(ranking.classes, ["Depression", "Anxiety", "PTSD"]);

    cfg.seed += 1;
    cfg.output_dir = dir.path().join("other-seed");
    let other = run_experiment(&cfg, true).unwrap();
    docs.push(MetricsDocument::load(&other.paths.metrics).unwrap());
    assert!(matches!(compare_models(&docs), Err(PipelineError::SplitMismatch { .. })));
}

#[test]
fn config_files_load_relative_to_their_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), TaskKind::Severity, 8);
    let text = cfg.to_toml().replace(&format!("{}/", dir.path().display()), "");
    let path = dir.path().join("run.toml");
    std::fs::write(&path, text).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}
