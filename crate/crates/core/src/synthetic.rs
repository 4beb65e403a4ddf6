//! Generated corpora for offline runs, tests and benchmarks.
//!
//! Every post is twelve words: four marker words drawn from its class's list
//! and eight neutral filler words. Marker lists for different classes hit
//! different categories of the bundled lexicon, so the classes separate in
//! lexicon-feature space. All posts share one length, so the percentile
//! filter keeps every post.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ColumnSchema, LabeledExample, Source};
use crate::embeddings::EmbeddingProviderConfig;
use crate::llm::{prompt_hash, MockFixture, PromptTemplate};
use crate::models::TrainConfig;
use crate::pipeline::{CachePaths, DatasetSpec, FeatureMode, Method, RunConfig, BUILTIN_LEXICON, CONFIG_VERSION};
use crate::task::{BinaryLabel, Diagnosis, Severity, TaskKind, TaskLabel};

const WORDS_PER_POST: usize = 12;
const MARKERS_PER_POST: usize = 4;

const FILLER: &[&str] = &[
    "table", "window", "street", "coffee", "monday", "train", "paper", "garden", "green", "river", "music", "book",
    "car", "city", "door", "lunch", "phone", "shop", "weather", "work", "bus", "kitchen", "movie", "dinner", "week",
    "office", "chair", "walk", "rain", "morning", "evening", "road",
];

fn markers(label: TaskLabel) -> &'static [&'static str] {
    match label {
        TaskLabel::Binary(BinaryLabel::Depression) => &["sad", "hopeless", "worthless", "lonely", "empty", "numb", "crying"],
        TaskLabel::Binary(BinaryLabel::NonDepression) => &["happy", "glad", "friends", "family", "we", "fun", "proud"],
        TaskLabel::Severity(Severity::Minimum) => &["calm", "relaxed", "good", "nice", "enjoying", "smile"],
        TaskLabel::Severity(Severity::Mild) => &["think", "maybe", "wonder", "because", "perhaps", "should"],
        TaskLabel::Severity(Severity::Moderate) => &["sad", "lonely", "empty", "tears", "grief", "loss"],
        TaskLabel::Severity(Severity::Severe) => &["always", "never", "nothing", "forever", "completely", "totally"],
        TaskLabel::Differential(Diagnosis::Depression) => &["sad", "hopeless", "empty", "numb", "worthless", "lonely"],
        TaskLabel::Differential(Diagnosis::Anxiety) => &["nervous", "panic", "worried", "tense", "dread", "restless"],
        TaskLabel::Differential(Diagnosis::Ptsd) => &["doctor", "therapy", "hospital", "insomnia", "symptoms", "diagnosed"],
    }
}

/// Sources and raw label text used for each generated class.
fn placements(label: TaskLabel) -> Vec<(Source, &'static str)> {
    match label {
        TaskLabel::Binary(BinaryLabel::Depression) => vec![
            (Source::Mhb, "depression"),
            (Source::Cams, "jobs and career"),
            (Source::HelaDepDet, "moderate"),
            (Source::Rmhd, "depression"),
            (Source::DepressionEmo, "sadness"),
        ],
        TaskLabel::Binary(BinaryLabel::NonDepression) => vec![(Source::Aita, "NTA")],
        TaskLabel::Severity(s) => vec![(Source::HelaDepDet, ["minimum", "mild", "moderate", "severe"][s.ordinal() as usize])],
        TaskLabel::Differential(d) => {
            let raw = match d {
                Diagnosis::Depression => "depression",
                Diagnosis::Anxiety => "anxiety",
                Diagnosis::Ptsd => "ptsd",
            };
            vec![(Source::Mhb, raw), (Source::Rmhd, raw)]
        }
    }
}

fn make_post(rng: &mut ChaCha8Rng, label: TaskLabel) -> String {
    let own = markers(label);
    let mut words: Vec<&str> = (0..MARKERS_PER_POST).map(|_| *own.choose(rng).expect("non-empty")).collect();
    words.extend((MARKERS_PER_POST..WORDS_PER_POST).map(|_| *FILLER.choose(rng).expect("non-empty")));
    words.shuffle(rng);
    words.join(" ")
}

/// Writes one CSV per source the task needs (`id,text,label`) with
/// `per_class` posts of every class, and returns their dataset specs.
pub fn write_fixture(dir: &Path, task: TaskKind, per_class: usize, seed: u64) -> io::Result<BTreeMap<Source, DatasetSpec>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: BTreeMap<Source, Vec<(String, String, String)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for label in task.labels() {
        let places = placements(label);
        for i in 0..per_class {
            let text = loop {
                let candidate = make_post(&mut rng, label);
                if seen.insert(candidate.clone()) {
                    break candidate;
                }
            };
            let (source, raw) = places[i % places.len()];
            let id = format!("{}-{}-{i}", source.name().to_lowercase(), label.name().to_lowercase());
            rows.entry(source).or_default().push((id, text, raw.to_string()));
        }
    }

    let mut specs = BTreeMap::new();
    for (source, rows) in rows {
        let path: PathBuf = dir.join(format!("{}.csv", source.name().to_lowercase()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["id", "text", "label"])?;
        for (id, text, label) in rows {
            w.write_record([id, text, label])?;
        }
        w.flush()?;
        let schema = ColumnSchema { id_column: Some("id".into()), ..ColumnSchema::csv("text", "label") };
        specs.insert(source, DatasetSpec { path, schema });
    }
    Ok(specs)
}

/// Offline config over a freshly written fixture: stub embeddings, bundled
/// lexicon, logistic regression, output under `dir/out`.
pub fn offline_config(dir: &Path, task: TaskKind, per_class: usize, seed: u64) -> io::Result<RunConfig> {
    let datasets = write_fixture(&dir.join("data"), task, per_class, seed)?;
    Ok(RunConfig {
        version: CONFIG_VERSION,
        task,
        seed,
        method: Method::LogisticRegression,
        feature_mode: FeatureMode::TextLiwc,
        train_fraction: crate::corpus::DEFAULT_TRAIN_FRACTION,
        output_dir: dir.join("out"),
        lexicon: Some(PathBuf::from(BUILTIN_LEXICON)),
        datasets,
        embeddings: EmbeddingProviderConfig::default(),
        llm: None,
        train: TrainConfig::default(),
        cache: CachePaths::default(),
    })
}

/// Mock chat fixture that answers every zero-shot prompt for `examples`
/// with the true label name.
pub fn truth_fixture(examples: &[LabeledExample], task: TaskKind) -> MockFixture {
    let template = PromptTemplate::zero_shot(task);
    let mut fixture = MockFixture::default();
    for ex in examples {
        fixture.responses.insert(prompt_hash(&template.render(&ex.post.text)), ex.label.name().to_string());
    }
    fixture
}
