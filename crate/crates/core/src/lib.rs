//! Depression-screening text classification.
//!
//! The crate covers the full experiment path: cleaning and splitting the
//! source datasets ([`corpus`]), LIWC-style lexicon features ([`lexicon`]),
//! sentence embeddings ([`embeddings`]), zero-shot labeling and mental-state
//! summaries from a chat model ([`llm`]), from-scratch classifiers
//! ([`models`]), metrics ([`eval`]) and the orchestration that ties them
//! together ([`pipeline`]).

pub mod cache;
pub mod corpus;
pub mod embeddings;
pub mod eval;
pub mod hashing;
pub mod lexicon;
pub mod llm;
pub mod models;
pub mod pipeline;
pub mod provider;
pub mod synthetic;
pub mod task;

pub use corpus::{LabeledExample, Post, Source, SplitCorpus};
pub use eval::{ConfusionMatrix, MetricsReport};
pub use lexicon::{Lexicon, LexiconFeatures, Standardizer};
pub use models::{FeatureMatrix, ModelFamily, TrainConfig, TrainedModel};
pub use task::{BinaryLabel, Diagnosis, Severity, TaskKind, TaskLabel};
pub use pipeline::{run_experiment, RunConfig, RunManifest};
