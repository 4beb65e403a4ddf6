//! `depscreen`: run screening experiments from a TOML config.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use depscreen_core::cache;
use depscreen_core::embeddings::EmbeddingCache;
use depscreen_core::llm::ResponseCache;
use depscreen_core::pipeline::{
    compare_models, prepare_corpus, run_experiment, FeatureMode, MetricsDocument, Method, Overrides, PipelineError,
    RunConfig,
};
use depscreen_core::TaskKind;

#[derive(Parser)]
#[command(name = "depscreen", version, about = "Depression screening experiments over social media posts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean, map and split the corpus; print stage counts.
    Ingest {
        #[command(flatten)]
        run: RunArgs,
        /// Write the split corpus here as JSON lines.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run one experiment and write its report files.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rank saved metrics.json files from the same test split by accuracy.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Write the ranking CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Inspect or clear the response caches named in a config.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// binary, severity or differential.
    #[arg(long)]
    task: Option<TaskKind>,
    /// logistic_regression, linear_svm, random_forest or zero_shot.
    #[arg(long)]
    method: Option<Method>,
    /// text_liwc or llm_summary.
    #[arg(long)]
    features: Option<FeatureMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory, overriding `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Refuse any network provider.
    #[arg(long)]
    offline: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            task: self.task,
            method: self.method,
            feature_mode: self.features,
            seed: self.seed,
            output_dir: self.output.clone(),
        });
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum CacheAction {
    Inspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<CacheKind>,
    },
    Clear {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<CacheKind>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CacheKind {
    Embeddings,
    Llm,
}

fn unwritable(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |e| PipelineError::UnwritableOutput { path: path.to_path_buf(), message: e.to_string() }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn ingest(run: &RunArgs, corpus: Option<&Path>) -> Result<(), PipelineError> {
    let cfg = run.config()?;
    let prepared = prepare_corpus(&cfg)?;
    if let Some(path) = corpus {
        let mut out = BufWriter::new(File::create(path).map_err(unwritable(path))?);
        depscreen_core::corpus::write_corpus(&prepared.split, &mut out).map_err(unwritable(path))?;
        out.flush().map_err(unwritable(path))?;
        log::info!("wrote {}", path.display());
    }
    print_json(&serde_json::json!({
        "task": cfg.task,
        "counts": prepared.counts,
        "per_source": prepared.per_source,
        "split_fingerprint": prepared.split.fingerprint(),
    }));
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), PipelineError> {
    let cfg = args.config()?;
    let out = run_experiment(&cfg, args.offline)?;
    let r = &out.report;
    println!(
        "{} on {}: accuracy {:.4}, macro F1 {:.4}, weighted F1 {:.4}, unparseable {}",
        out.manifest.model_tag, cfg.task, r.accuracy, r.macro_avg.f1, r.weighted.f1, out.manifest.unparseable
    );
    println!("reports in {}", cfg.output_dir.display());
    Ok(())
}

fn compare(reports: &[PathBuf], output: Option<&Path>) -> Result<(), PipelineError> {
    let docs = reports.iter().map(|p| MetricsDocument::load(p)).collect::<Result<Vec<_>, _>>()?;
    let csv = compare_models(&docs)?.to_csv();
    match output {
        Some(path) => std::fs::write(path, csv).map_err(unwritable(path)),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cache_paths(config: &Path, kind: Option<CacheKind>) -> Result<Vec<(CacheKind, Option<PathBuf>)>, PipelineError> {
    let cfg = RunConfig::load(config)?;
    let all = [(CacheKind::Embeddings, cfg.cache.embeddings), (CacheKind::Llm, cfg.cache.llm)];
    Ok(all.into_iter().filter(|(k, _)| kind.is_none_or(|want| want == *k)).collect())
}

fn kind_name(kind: CacheKind) -> &'static str {
    match kind {
        CacheKind::Embeddings => "embeddings",
        CacheKind::Llm => "llm",
    }
}

fn cache_error(path: &Path) -> impl FnOnce(cache::CacheError) -> PipelineError + '_ {
    move |e| PipelineError::UnreadableReport { path: path.to_path_buf(), message: e.to_string() }
}

fn cache_action(action: &CacheAction) -> Result<(), PipelineError> {
    match action {
        CacheAction::Inspect { config, kind } => {
            let mut out = serde_json::Map::new();
            for (k, path) in cache_paths(config, *kind)? {
                let value = match path {
                    None => serde_json::Value::Null,
                    Some(p) if !p.exists() => serde_json::json!({ "path": p, "exists": false }),
                    Some(p) => {
                        let summary = match k {
                            CacheKind::Embeddings => EmbeddingCache::open(&p).map_err(cache_error(&p))?.summary(),
                            CacheKind::Llm => ResponseCache::open(&p).map_err(cache_error(&p))?.summary(),
                        };
                        serde_json::json!({ "path": p, "exists": true, "summary": summary })
                    }
                };
                out.insert(kind_name(k).to_string(), value);
            }
            print_json(&out);
        }
        CacheAction::Clear { config, kind } => {
            for (k, path) in cache_paths(config, *kind)? {
                let Some(p) = path else { continue };
                let removed = cache::clear(&p)
                    .map_err(|e| PipelineError::UnwritableOutput { path: p.clone(), message: e.to_string() })?;
                println!("{}: {} {}", kind_name(k), if removed { "removed" } else { "absent" }, p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest { run, corpus } => ingest(run, corpus.as_deref()),
        Command::Run { run: args } => run(args),
        Command::Compare { reports, output } => compare(reports, output.as_deref()),
        Command::Cache { action } => cache_action(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
