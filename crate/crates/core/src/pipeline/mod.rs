//! End-to-end experiment runs.
//!
//! A run goes through five stages: preprocessing, feature extraction (raw
//! embeddings plus lexicon features), zero-shot prompting, summary embedding,
//! and training with evaluation. Each method uses the subset it needs.
//! Supervised methods only ever hand training rows to the standardizer and
//! the trainer; the manifest records fingerprints of the rows each was fitted
//! on so this can be checked after the fact.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, Post, Source, SplitCorpus, StageCounts};
use crate::embeddings::{EmbeddingError, EmbeddingStats, Embedder};
use crate::eval::{self, EvalError, MetricsReport, Prediction};
use crate::hashing;
use crate::lexicon::{Lexicon, LexiconError, Standardizer};
use crate::llm::{ChatProvider, LlmClient, LlmError, LlmRun, LlmStats, MockChat, Parsed, RemoteChat, PROMPT_ROLE};
use crate::models::{self, FeatureMatrix, ModelError, TrainedModel};
use crate::provider::{ProviderError, RetryPolicy};
use crate::task::TaskLabel;

pub use config::{
    CachePaths, DatasetSpec, FeatureMode, LlmConfig, LlmProviderKind, Method, Overrides, RunConfig, SubSeeds,
    BUILTIN_LEXICON, CONFIG_VERSION,
};
pub use report::{
    compare_models, emit_report, DisplayMetrics, MetricsDocument, Ranking, RankingRow, ReportPaths, CONFUSION_FILE,
    F1_FILE, MANIFEST_FILE, METRICS_FILE,
};

/// The dictionary shipped with the crate.
pub const BUILTIN_LEXICON_TEXT: &str = include_str!("../../data/open_lexicon.dic");

/// Text embedded in place of a summary that came back blank.
pub const EMPTY_SUMMARY_PLACEHOLDER: &str = "No summary available.";

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preprocessing,
    FeatureExtraction,
    ZeroShot,
    SummaryEmbedding,
    Training,
    Evaluation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Preprocessing => "preprocessing",
            Stage::FeatureExtraction => "feature_extraction",
            Stage::ZeroShot => "zero_shot",
            Stage::SummaryEmbedding => "summary_embedding",
            Stage::Training => "training",
            Stage::Evaluation => "evaluation",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{failed} LLM call(s) failed; first ({post_id}): {error}")]
    LlmCalls { failed: usize, post_id: String, error: ProviderError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("cannot write {path}: {message}")]
    UnwritableOutput { path: PathBuf, message: String },
    #[error("cannot read report {path}: {message}")]
    UnreadableReport { path: PathBuf, message: String },
    #[error("reports `{first}` and `{other}` were scored on different test splits")]
    SplitMismatch { first: String, other: String },
    #[error("a ranking needs at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn provider_exit(e: &ProviderError) -> i32 {
    match e {
        ProviderError::Offline => 2,
        _ => 4,
    }
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 data, 4 provider.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { source, .. } => match source {
                StageError::Embedding(EmbeddingError::Provider(p)) => provider_exit(p),
                StageError::Embedding(EmbeddingError::Config(_)) => 2,
                StageError::Embedding(EmbeddingError::EmptyText(_) | EmbeddingError::NoTexts | EmbeddingError::Cache(_)) => 3,
                StageError::Embedding(_) => 4,
                StageError::Llm(LlmError::Provider(p)) => provider_exit(p),
                StageError::Llm(LlmError::Config(_) | LlmError::Fixture { .. }) => 2,
                StageError::Llm(LlmError::Cache(_)) => 3,
                StageError::LlmCalls { error, .. } => provider_exit(error),
                _ => 3,
            },
            _ => 3,
        }
    }
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: e.into() }
}

/// Corpus sizes through cleaning and splitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub loaded: usize,
    pub deduped: usize,
    pub filtered: usize,
    pub mapped: usize,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub counts: CorpusCounts,
    pub per_source: BTreeMap<Source, StageCounts>,
    pub split: SplitCorpus,
}

/// Loads the datasets the task needs, cleans them, maps labels and splits.
pub fn prepare_corpus(cfg: &RunConfig) -> Result<PreparedCorpus, PipelineError> {
    let stage = Stage::Preprocessing;
    let mut datasets = BTreeMap::new();
    for &source in corpus::required_sources(cfg.task) {
        let Some(spec) = cfg.datasets.get(&source) else {
            return Err(at(stage)(CorpusError::MissingDataset { task: cfg.task, source_name: source }));
        };
        let posts = corpus::load_dataset(&spec.path, source, &spec.schema).map_err(at(stage))?;
        log::info!("loaded {} posts from {source}", posts.len());
        datasets.insert(source, posts);
    }
    let assembly = corpus::assemble_task(cfg.task, &datasets).map_err(at(stage))?;
    let split = corpus::split(assembly.examples, cfg.train_fraction, cfg.seeds().split).map_err(at(stage))?;
    let c = assembly.counts;
    let counts = CorpusCounts {
        loaded: c.loaded,
        deduped: c.deduped,
        filtered: c.filtered,
        mapped: c.mapped,
        train: split.train.len(),
        test: split.test.len(),
    };
    Ok(PreparedCorpus { counts, per_source: assembly.per_source, split })
}

/// Row sets the fitted components saw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitRecord {
    /// Fingerprint of the rows the lexicon standardizer was fitted on.
    pub standardizer_rows: Option<String>,
    /// Fingerprint of the rows the classifier was trained on.
    pub model_rows: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingUsage {
    pub model: String,
    pub dimension: usize,
    #[serde(flatten)]
    pub stats: EmbeddingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmUsage {
    pub model: String,
    pub prompt_role: String,
    #[serde(flatten)]
    pub stats: LlmStats,
    /// Blank summaries replaced by a placeholder before embedding.
    pub placeholder_summaries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub model_tag: String,
    pub offline: bool,
    pub config: RunConfig,
    pub seeds: SubSeeds,
    pub counts: CorpusCounts,
    pub per_source: BTreeMap<Source, StageCounts>,
    pub degenerate_labels: Vec<TaskLabel>,
    pub split_fingerprint: String,
    pub train_fingerprint: String,
    pub test_fingerprint: String,
    pub fit: Option<FitRecord>,
    pub embeddings: Option<EmbeddingUsage>,
    pub llm: Option<LlmUsage>,
    /// Test predictions with no usable label.
    pub unparseable: u64,
    pub timings: Vec<StageTiming>,
    pub metrics_file: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: MetricsReport,
    pub model: Option<TrainedModel>,
    /// `(post id, truth, prediction)` over the test split.
    pub predictions: Vec<(String, TaskLabel, Prediction)>,
    pub paths: ReportPaths,
}

#[derive(Default)]
struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn record(&mut self, stage: Stage, elapsed: Duration) {
        match self.timings.iter_mut().find(|t| t.stage == stage) {
            Some(t) => t.seconds += elapsed.as_secs_f64(),
            None => self.timings.push(StageTiming { stage, seconds: elapsed.as_secs_f64() }),
        }
    }

    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed());
        out
    }
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon, StageError> {
    if path.as_os_str() == BUILTIN_LEXICON {
        return Ok(Lexicon::parse(BUILTIN_LEXICON_TEXT)?);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| StageError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(Lexicon::parse(&text)?)
}

fn chat_provider(llm: &LlmConfig) -> Result<Box<dyn ChatProvider>, LlmError> {
    Ok(match llm.kind {
        LlmProviderKind::Mock => {
            let path = llm.fixture.as_deref().ok_or_else(|| LlmError::Config("mock provider needs a fixture".into()))?;
            Box::new(MockChat::load(path)?)
        }
        LlmProviderKind::Remote => Box::new(RemoteChat::new(
            llm.base_url.as_deref(),
            &llm.model,
            Duration::from_secs(llm.timeout_secs),
            RetryPolicy::default(),
        )?),
    })
}

fn llm_client(cfg: &RunConfig) -> Result<LlmClient, LlmError> {
    let llm = cfg.llm.as_ref().ok_or_else(|| LlmError::Config("no [llm] section".into()))?;
    LlmClient::with_cache_path(chat_provider(llm)?, cfg.cache.llm.as_deref(), llm.concurrency)
}

/// Fails the run if any call failed; successful responses are already cached.
fn require_complete(run: &LlmRun) -> Result<(), StageError> {
    match run.failures.first() {
        None => Ok(()),
        Some(first) => Err(StageError::LlmCalls {
            failed: run.failures.len(),
            post_id: first.post_id.clone(),
            error: first.error.clone(),
        }),
    }
}

fn llm_usage(client: &LlmClient, placeholder_summaries: usize) -> LlmUsage {
    LlmUsage { model: client.model_name(), prompt_role: PROMPT_ROLE.to_string(), stats: client.stats(), placeholder_summaries }
}

struct Features {
    train: FeatureMatrix,
    test: FeatureMatrix,
    standardizer_rows: Option<String>,
    embeddings: EmbeddingUsage,
    llm: Option<LlmUsage>,
}

fn ids(posts: &[&Post]) -> Vec<String> {
    posts.iter().map(|p| p.id.clone()).collect()
}

fn build_features(
    cfg: &RunConfig,
    split: &SplitCorpus,
    offline: bool,
    timer: &mut Timer,
) -> Result<Features, PipelineError> {
    let train_posts: Vec<&Post> = split.train.iter().map(|e| &e.post).collect();
    let test_posts: Vec<&Post> = split.test.iter().map(|e| &e.post).collect();
    let n_train = train_posts.len();

    let embed_stage = match cfg.feature_mode {
        FeatureMode::TextLiwc => Stage::FeatureExtraction,
        FeatureMode::LlmSummary => Stage::SummaryEmbedding,
    };
    let mut embedder = Embedder::from_config(&cfg.embeddings, cfg.seeds().stub, cfg.cache.embeddings.as_deref(), offline)
        .map_err(at(embed_stage))?;

    let mut llm = None;
    let texts: Vec<String> = match cfg.feature_mode {
        FeatureMode::TextLiwc => train_posts.iter().chain(&test_posts).map(|p| p.text.clone()).collect(),
        FeatureMode::LlmSummary => {
            let stage = Stage::SummaryEmbedding;
            let mut client = llm_client(cfg).map_err(at(stage))?;
            let all: Vec<Post> = train_posts.iter().chain(&test_posts).map(|&p| p.clone()).collect();
            let run = timer.time(stage, || client.summarize(&all)).map_err(at(stage))?;
            require_complete(&run).map_err(at(stage))?;
            let mut placeholders = 0;
            let texts = run
                .outcomes
                .into_iter()
                .map(|o| match o.map(|o| o.parsed) {
                    Some(Parsed::Summary(s)) => s,
                    _ => {
                        placeholders += 1;
                        EMPTY_SUMMARY_PLACEHOLDER.to_string()
                    }
                })
                .collect();
            llm = Some(llm_usage(&client, placeholders));
            texts
        }
    };

    let mut vectors = timer.time(embed_stage, || embedder.embed_batch(&texts)).map_err(at(embed_stage))?;
    let embeddings = EmbeddingUsage { model: embedder.model_name(), dimension: embedder.dimension(), stats: embedder.stats() };

    let mut standardizer_rows = None;
    if cfg.feature_mode == FeatureMode::TextLiwc {
        let stage = Stage::FeatureExtraction;
        let start = Instant::now();
        let lexicon_path = cfg.lexicon.as_deref().ok_or_else(|| PipelineError::Config("text_liwc needs a lexicon".into()))?;
        let lexicon = load_lexicon(lexicon_path).map_err(at(stage))?;
        let raw: Vec<Vec<f64>> =
            train_posts.iter().chain(&test_posts).map(|p| lexicon.extract_features(&p.text).values).collect();
        let standardizer = Standardizer::fit(&raw[..n_train]).map_err(at(stage))?;
        standardizer_rows = Some(hashing::id_fingerprint(train_posts.iter().map(|p| p.id.as_str())));
        for (v, lex) in vectors.iter_mut().zip(&raw) {
            let z = standardizer.apply(lex).map_err(at(stage))?;
            *v = models::concat_features(v, &z).map_err(at(stage))?;
        }
        timer.record(stage, start.elapsed());
    }

    let test_vectors = vectors.split_off(n_train);
    let train = FeatureMatrix::new(vectors, ids(&train_posts)).map_err(at(Stage::Training))?;
    let test = FeatureMatrix::new(test_vectors, ids(&test_posts)).map_err(at(Stage::Training))?;
    Ok(Features { train, test, standardizer_rows, embeddings, llm })
}

/// Runs the configured experiment and writes its report to `output_dir`.
pub fn run_experiment(cfg: &RunConfig, offline: bool) -> Result<RunOutcome, PipelineError> {
    cfg.validate(offline)?;
    let seeds = cfg.seeds();
    let mut timer = Timer::default();
    log::info!("run {} on the {} task, seed {}", cfg.model_tag(), cfg.task, cfg.seed);

    let prepared = timer.time(Stage::Preprocessing, || prepare_corpus(cfg))?;
    let split = &prepared.split;
    log::info!("split: {} train / {} test", split.train.len(), split.test.len());
    let truth: Vec<TaskLabel> = split.test.iter().map(|e| e.label).collect();

    let mut fit = None;
    let mut embeddings = None;
    let llm;
    let mut model = None;
    let predictions: Vec<Prediction> = match cfg.method.family() {
        None => {
            let stage = Stage::ZeroShot;
            let mut client = llm_client(cfg).map_err(at(stage))?;
            let posts: Vec<Post> = split.test.iter().map(|e| e.post.clone()).collect();
            let run = timer.time(stage, || client.classify_zero_shot(cfg.task, &posts)).map_err(at(stage))?;
            require_complete(&run).map_err(at(stage))?;
            llm = Some(llm_usage(&client, 0));
            run.outcomes.iter().map(|o| o.as_ref().and_then(|o| o.label())).collect()
        }
        Some(family) => {
            let features = build_features(cfg, split, offline, &mut timer)?;
            let train_labels: Vec<TaskLabel> = split.train.iter().map(|e| e.label).collect();
            let train_cfg = models::TrainConfig { seed: seeds.forest, ..cfg.train };
            let trained = timer
                .time(Stage::Training, || models::train(family, &features.train, &train_labels, &train_cfg))
                .map_err(at(Stage::Training))?;
            fit = Some(FitRecord {
                standardizer_rows: features.standardizer_rows,
                model_rows: hashing::id_fingerprint(features.train.row_ids().iter().map(String::as_str)),
                rows: features.train.rows(),
            });
            let predicted = trained.predict(&features.test).map_err(at(Stage::Evaluation))?;
            embeddings = Some(features.embeddings);
            llm = features.llm;
            model = Some(trained);
            predicted.into_iter().map(Some).collect()
        }
    };

    let start = Instant::now();
    let cm = eval::confusion(&cfg.task.labels(), &truth, &predictions).map_err(at(Stage::Evaluation))?;
    let report = eval::metrics(&cm).map_err(at(Stage::Evaluation))?;
    timer.record(Stage::Evaluation, start.elapsed());

    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model_tag: cfg.model_tag(),
        offline,
        config: cfg.clone(),
        seeds,
        counts: prepared.counts,
        per_source: prepared.per_source.clone(),
        degenerate_labels: split.degenerate_labels.clone(),
        split_fingerprint: split.fingerprint(),
        train_fingerprint: split.train_fingerprint(),
        test_fingerprint: hashing::id_fingerprint(split.test.iter().map(|e| e.post.id.as_str())),
        fit,
        embeddings,
        llm,
        unparseable: cm.unparseable_count,
        timings: timer.timings,
        metrics_file: METRICS_FILE.to_string(),
    };
    let paths = emit_report(&report, &manifest, &cfg.output_dir)?;
    log::info!("accuracy {:.4}; report in {}", report.accuracy, cfg.output_dir.display());

    let predictions = split
        .test
        .iter()
        .zip(truth)
        .zip(predictions)
        .map(|((e, t), p)| (e.post.id.clone(), t, p))
        .collect();
    Ok(RunOutcome { manifest, report, model, predictions, paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ConfusionMatrix;
    use crate::task::{BinaryLabel, TaskKind};

    #[test]
    fn builtin_lexicon_parses() {
        let lex = load_lexicon(Path::new(BUILTIN_LEXICON)).unwrap();
        assert!(lex.len() >= 8);
        assert!(lex.category_names().contains(&"negemo"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        let data = PipelineError::Stage { stage: Stage::Preprocessing, source: CorpusError::TooFewExamples(1).into() };
        assert_eq!(data.exit_code(), 3);
        let net = PipelineError::Stage {
            stage: Stage::ZeroShot,
            source: LlmError::Provider(ProviderError::Unavailable { attempts: 3, message: "down".into() }).into(),
        };
        assert_eq!(net.exit_code(), 4);
        assert!(net.to_string().starts_with("zero_shot stage failed"));
    }

    fn doc(model: &str, acc_hits: u64, fingerprint: &str) -> MetricsDocument {
        let classes = TaskKind::Binary.labels();
        let mut cm = ConfusionMatrix::zeros(classes);
        cm.counts = vec![vec![acc_hits, 100 - acc_hits], vec![0, 0]];
        let report = eval::metrics(&cm).unwrap();
        MetricsDocument::new(model, TaskKind::Binary, fingerprint, &report)
    }

    #[test]
    fn ranking_orders_by_accuracy() {
        let docs = vec![doc("svm", 91, "s"), doc("forest", 89, "s"), doc("zero_shot", 96, "s")];
        let ranking = compare_models(&docs).unwrap();
        let order: Vec<&str> = ranking.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(order, ["zero_shot", "svm", "forest"]);
        let accs: Vec<f64> = ranking.rows.iter().map(|r| r.accuracy).collect();
        assert_eq!(accs, [0.96, 0.91, 0.89]);
        assert!(ranking.to_csv().starts_with("rank,model,accuracy,macro_f1,weighted_f1,f1_Depression,f1_Non-depression\n1,zero_shot,0.9600"));
    }

    #[test]
    fn ranking_errors() {
        assert!(matches!(compare_models(&[doc("a", 5, "s")]), Err(PipelineError::TooFewReports(1))));
        assert!(matches!(compare_models(&[doc("a", 5, "s"), doc("b", 6, "t")]), Err(PipelineError::SplitMismatch { .. })));
    }

    #[test]
    fn metrics_document_round_trips() {
        let d = doc("m", 37, "fp");
        let text = serde_json::to_string_pretty(&d).unwrap();
        let back: MetricsDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.display.accuracy, 0.37);
        assert_eq!(back.exact.confusion.classes[0], TaskLabel::Binary(BinaryLabel::Depression));
    }
}
