//! Run configuration, read from TOML.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ColumnSchema, Source, DEFAULT_TRAIN_FRACTION};
use crate::embeddings::{EmbeddingProviderConfig, ProviderKind};
use crate::hashing;
use crate::models::{ModelFamily, TrainConfig};
use crate::task::TaskKind;

use super::PipelineError;

pub const CONFIG_VERSION: u32 = 1;

/// Value of `lexicon` that selects the dictionary bundled with the crate.
pub const BUILTIN_LEXICON: &str = "builtin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Raw-post embedding concatenated with standardized lexicon features.
    TextLiwc,
    /// Embedding of an LLM-written mental-state summary.
    LlmSummary,
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "text_liwc" | "text" => Ok(FeatureMode::TextLiwc),
            "llm_summary" | "summary" => Ok(FeatureMode::LlmSummary),
            other => Err(format!("unknown feature mode `{other}`")),
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::TextLiwc => "text_liwc",
            FeatureMode::LlmSummary => "llm_summary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LogisticRegression,
    LinearSvm,
    RandomForest,
    ZeroShot,
}

impl Method {
    pub fn family(self) -> Option<ModelFamily> {
        match self {
            Method::LogisticRegression => Some(ModelFamily::LogisticRegression),
            Method::LinearSvm => Some(ModelFamily::LinearSvm),
            Method::RandomForest => Some(ModelFamily::RandomForest),
            Method::ZeroShot => None,
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        if matches!(norm.as_str(), "zero_shot" | "zeroshot" | "llm") {
            return Ok(Method::ZeroShot);
        }
        Ok(match norm.parse::<ModelFamily>()? {
            ModelFamily::LogisticRegression => Method::LogisticRegression,
            ModelFamily::LinearSvm => Method::LinearSvm,
            ModelFamily::RandomForest => Method::RandomForest,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family() {
            Some(family) => family.fmt(f),
            None => f.write_str("zero_shot"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(flatten)]
    pub schema: ColumnSchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmProviderKind {
    /// Canned responses from a fixture file keyed by prompt hash.
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub kind: LlmProviderKind,
    pub model: String,
    pub base_url: Option<String>,
    pub fixture: Option<PathBuf>,
    pub timeout_secs: u64,
    pub concurrency: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            kind: LlmProviderKind::Mock,
            model: "gpt-4o".to_string(),
            base_url: None,
            fixture: None,
            timeout_secs: 120,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CachePaths {
    pub embeddings: Option<PathBuf>,
    pub llm: Option<PathBuf>,
}

fn default_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}

fn default_feature_mode() -> FeatureMode {
    FeatureMode::TextLiwc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub task: TaskKind,
    pub seed: u64,
    pub method: Method,
    #[serde(default = "default_feature_mode")]
    pub feature_mode: FeatureMode,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub output_dir: PathBuf,
    /// Dictionary path, or `builtin`.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    pub datasets: BTreeMap<Source, DatasetSpec>,
    #[serde(default)]
    pub embeddings: EmbeddingProviderConfig,
    #[serde(default)]
    pub llm: Option<LlmConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cache: CachePaths,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<TaskKind>,
    pub method: Option<Method>,
    pub feature_mode: Option<FeatureMode>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// Seeds derived from the root seed by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSeeds {
    pub root: u64,
    pub split: u64,
    pub forest: u64,
    pub stub: u64,
}

impl SubSeeds {
    pub fn derive(root: u64) -> Self {
        SubSeeds {
            root,
            split: hashing::sub_seed(root, "split"),
            forest: hashing::sub_seed(root, "forest"),
            stub: hashing::sub_seed(root, "stub"),
        }
    }
}

impl RunConfig {
    /// Parses a config; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.output_dir);
        if let Some(lex) = self.lexicon.as_mut() {
            if lex.as_os_str() != BUILTIN_LEXICON {
                resolve(lex);
            }
        }
        for spec in self.datasets.values_mut() {
            resolve(&mut spec.path);
        }
        if let Some(fixture) = self.llm.as_mut().and_then(|l| l.fixture.as_mut()) {
            resolve(fixture);
        }
        for p in [self.cache.embeddings.as_mut(), self.cache.llm.as_mut()].into_iter().flatten() {
            resolve(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(t) = o.task {
            self.task = t;
        }
        if let Some(m) = o.method {
            self.method = m;
        }
        if let Some(f) = o.feature_mode {
            self.feature_mode = f;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    pub fn seeds(&self) -> SubSeeds {
        SubSeeds::derive(self.seed)
    }

    /// Short name of the configured method, e.g. `random_forest+llm_summary`.
    pub fn model_tag(&self) -> String {
        match self.method {
            Method::ZeroShot => "zero_shot".to_string(),
            m => format!("{m}+{}", self.feature_mode),
        }
    }

    fn needs_llm(&self) -> bool {
        self.method == Method::ZeroShot || self.feature_mode == FeatureMode::LlmSummary
    }

    /// Checks cross-field requirements. In offline mode any remote provider
    /// the run would use is rejected.
    pub fn validate(&self, offline: bool) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.datasets.is_empty() {
            return bad("no datasets configured".into());
        }
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))?;

        let supervised = self.method != Method::ZeroShot;
        if supervised {
            self.embeddings.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            if offline && self.embeddings.kind == ProviderKind::Remote {
                return bad("offline mode cannot use the remote embedding provider".into());
            }
            if self.feature_mode == FeatureMode::TextLiwc && self.lexicon.is_none() {
                return bad("text_liwc features need a lexicon path".into());
            }
        }
        if self.needs_llm() {
            let Some(llm) = &self.llm else {
                return bad(format!("{} needs an [llm] provider", self.model_tag()));
            };
            match llm.kind {
                LlmProviderKind::Mock if llm.fixture.is_none() => return bad("the mock LLM provider needs a fixture".into()),
                LlmProviderKind::Remote if offline => return bad("offline mode cannot use the remote LLM provider".into()),
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FileFormat;

    const SAMPLE: &str = r#"
version = 1
task = "severity"
seed = 7
method = "random_forest"
feature_mode = "llm_summary"
output_dir = "out"

[datasets.HelaDepDet]
path = "data/hela.tsv"
format = { delimited = { delimiter = "\t" } }
text_column = "post"
label_column = "label"

[llm]
kind = "mock"
fixture = "mock.json"

[train]
n_trees = 10
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = RunConfig::from_toml(SAMPLE, Path::new("/base")).unwrap();
        assert_eq!(cfg.task, TaskKind::Severity);
        assert_eq!(cfg.output_dir, PathBuf::from("/base/out"));
        let hela = &cfg.datasets[&Source::HelaDepDet];
        assert_eq!(hela.path, PathBuf::from("/base/data/hela.tsv"));
        assert_eq!(hela.schema.format, FileFormat::Delimited { delimiter: '\t' });
        assert_eq!(cfg.train.n_trees, 10);
        assert_eq!(cfg.train.c, 1.0);
        assert_eq!(cfg.train_fraction, 0.7);
        assert!(cfg.validate(true).is_ok());
        assert_eq!(cfg.model_tag(), "random_forest+llm_summary");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::from_toml(SAMPLE, Path::new("/base")).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn cross_field_rules() {
        let mut cfg = RunConfig::from_toml(SAMPLE, Path::new("/b")).unwrap();
        cfg.feature_mode = FeatureMode::TextLiwc;
        assert!(cfg.validate(false).is_err(), "text_liwc without lexicon");
        cfg.method = Method::ZeroShot;
        assert!(cfg.validate(false).is_ok(), "zero-shot ignores feature mode");
        cfg.llm = None;
        assert!(cfg.validate(false).is_err());
        cfg.llm = Some(LlmConfig { kind: LlmProviderKind::Remote, ..Default::default() });
        assert!(cfg.validate(false).is_ok());
        assert!(cfg.validate(true).is_err());
        cfg.version = 2;
        assert!(cfg.validate(false).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = SAMPLE.replace("seed = 7", "seed = 7\nsede = 8");
        assert!(matches!(RunConfig::from_toml(&text, Path::new(".")), Err(PipelineError::Config(_))));
    }

    #[test]
    fn method_names() {
        assert_eq!("zero-shot".parse::<Method>(), Ok(Method::ZeroShot));
        assert_eq!("svm".parse::<Method>(), Ok(Method::LinearSvm));
        assert_eq!(Method::LinearSvm.to_string(), "linear_svm");
        assert!("knn".parse::<Method>().is_err());
    }

    #[test]
    fn sub_seeds_differ_by_name() {
        let s = SubSeeds::derive(42);
        assert_ne!(s.split, s.forest);
        assert_ne!(s.forest, s.stub);
        assert_eq!(s, SubSeeds::derive(42));
    }
}
