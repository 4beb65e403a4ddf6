//! Dataset ingestion, cleaning, label mapping and train/test splitting.
//!
//! Cleaning runs per source dataset: exact duplicates (after whitespace
//! normalization) are dropped, then posts outside the nearest-rank 10th–90th
//! percentile word-count band are removed. Labels are then mapped into one of
//! the three task spaces and the result is split 70/30, stratified by label.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing;
use crate::task::{BinaryLabel, Diagnosis, Severity, TaskKind, TaskLabel};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const LOWER_PERCENTILE: u32 = 10;
pub const UPPER_PERCENTILE: u32 = 90;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {message}")]
    UnreadableFile { path: PathBuf, message: String },
    #[error("{path}: column `{column}` not found")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{} post(s) have labels with no mapping for the {task} task, first: {}", .records.len(), .records.first().map(|r| r.to_string()).unwrap_or_default())]
    UnmappedLabel { task: TaskKind, records: Vec<UnmappedRecord> },
    #[error("the {task} task requires dataset {source_name}, which was not provided")]
    MissingDataset { task: TaskKind, source_name: Source },
    #[error("split needs at least 2 examples, got {0}")]
    TooFewExamples(usize),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("unknown dataset `{0}`")]
    UnknownSource(String),
    #[error("invalid post {id}: {reason}")]
    InvalidPost { id: String, reason: String },
}

/// A post whose raw label could not be mapped into the task's label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnmappedRecord {
    pub post_id: String,
    pub source: Source,
    pub raw_label: String,
}

impl fmt::Display for UnmappedRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}, label {:?})", self.post_id, self.source, self.raw_label)
    }
}

/// The six source datasets. Declaration order is the merge order used when
/// assembling a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "MHB")]
    Mhb,
    #[serde(rename = "CAMS")]
    Cams,
    #[serde(rename = "HelaDepDet")]
    HelaDepDet,
    #[serde(rename = "RMHD")]
    Rmhd,
    #[serde(rename = "DepressionEmo")]
    DepressionEmo,
    #[serde(rename = "AITA")]
    Aita,
}

impl Source {
    pub const ALL: [Source; 6] = [
        Source::Mhb,
        Source::Cams,
        Source::HelaDepDet,
        Source::Rmhd,
        Source::DepressionEmo,
        Source::Aita,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::Mhb => "MHB",
            Source::Cams => "CAMS",
            Source::HelaDepDet => "HelaDepDet",
            Source::Rmhd => "RMHD",
            Source::DepressionEmo => "DepressionEmo",
            Source::Aita => "AITA",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CorpusError::UnknownSource(s.to_string()))
    }
}

/// One social-media post with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub source: Source,
    pub raw_label: String,
}

impl Post {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        source: Source,
        raw_label: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let post = Post { id: id.into(), text: text.into(), source, raw_label: raw_label.into() };
        if normalize_whitespace(&post.text).is_empty() {
            return Err(CorpusError::InvalidPost { id: post.id, reason: "empty text".into() });
        }
        Ok(post)
    }

    /// Whitespace-delimited word count.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub post: Post,
    pub label: TaskLabel,
}

/// File layout of a raw dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    /// Delimiter-separated table with a header row.
    Delimited { delimiter: char },
    /// One JSON object per line.
    JsonLines,
}

impl Default for FileFormat {
    fn default() -> Self {
        FileFormat::Delimited { delimiter: ',' }
    }
}

/// Which columns of a raw file hold the text, label and (optionally) id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    #[serde(default)]
    pub format: FileFormat,
    pub text_column: String,
    /// Absent for unlabeled control data; the raw label is then empty.
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub id_column: Option<String>,
}

impl ColumnSchema {
    pub fn csv(text_column: &str, label_column: &str) -> Self {
        ColumnSchema {
            format: FileFormat::default(),
            text_column: text_column.to_string(),
            label_column: Some(label_column.to_string()),
            id_column: None,
        }
    }
}

/// Reads one raw dataset. Rows whose text is empty after whitespace
/// normalization are dropped; ids default to `<source>:<row-index>`, with the
/// index counted over data rows before dropping.
pub fn load_dataset(path: &Path, source: Source, schema: &ColumnSchema) -> Result<Vec<Post>, CorpusError> {
    let unreadable = |message: String| CorpusError::UnreadableFile { path: path.to_path_buf(), message };
    let file = File::open(path).map_err(|e| unreadable(e.to_string()))?;
    let rows = match &schema.format {
        FileFormat::Delimited { delimiter } => read_delimited(file, *delimiter, path, schema)?,
        FileFormat::JsonLines => read_json_lines(file, path, schema)?,
    };

    let mut posts = Vec::with_capacity(rows.len());
    for (index, row) in rows.into_iter().enumerate() {
        if normalize_whitespace(&row.text).is_empty() {
            continue;
        }
        let id = match row.id {
            Some(id) if !id.trim().is_empty() => id,
            _ => format!("{source}:{index}"),
        };
        posts.push(Post { id, text: row.text, source, raw_label: row.label });
    }
    Ok(posts)
}

struct RawRow {
    id: Option<String>,
    text: String,
    label: String,
}

fn read_delimited(file: File, delimiter: char, path: &Path, schema: &ColumnSchema) -> Result<Vec<RawRow>, CorpusError> {
    let unreadable = |message: String| CorpusError::UnreadableFile { path: path.to_path_buf(), message };
    if !delimiter.is_ascii() {
        return Err(unreadable(format!("delimiter {delimiter:?} is not a single byte")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .flexible(false)
        .from_reader(BufReader::new(file));
    let headers = reader.headers().map_err(|e| unreadable(e.to_string()))?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| CorpusError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let text_idx = column(&schema.text_column)?;
    let label_idx = schema.label_column.as_deref().map(column).transpose()?;
    let id_idx = schema.id_column.as_deref().map(column).transpose()?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| unreadable(e.to_string()))?;
        let get = |i: usize| record.get(i).unwrap_or_default().to_string();
        rows.push(RawRow {
            id: id_idx.map(get),
            text: get(text_idx),
            label: label_idx.map(get).unwrap_or_default(),
        });
    }
    Ok(rows)
}

fn read_json_lines(file: File, path: &Path, schema: &ColumnSchema) -> Result<Vec<RawRow>, CorpusError> {
    let unreadable = |message: String| CorpusError::UnreadableFile { path: path.to_path_buf(), message };
    let missing = |column: &str| CorpusError::MissingColumn { path: path.to_path_buf(), column: column.to_string() };
    let field = |obj: &serde_json::Map<String, serde_json::Value>, name: &str| -> Option<String> {
        obj.get(name).map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Null => String::new(),
            other => other.to_string(),
        })
    };

    let mut rows = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| unreadable(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| unreadable(format!("line {}: {e}", line_no + 1)))?;
        let obj = value
            .as_object()
            .ok_or_else(|| unreadable(format!("line {}: expected a JSON object", line_no + 1)))?;
        let text = field(obj, &schema.text_column).ok_or_else(|| missing(&schema.text_column))?;
        let label = match &schema.label_column {
            Some(col) => field(obj, col).ok_or_else(|| missing(col))?,
            None => String::new(),
        };
        let id = match &schema.id_column {
            Some(col) => Some(field(obj, col).ok_or_else(|| missing(col))?),
            None => None,
        };
        rows.push(RawRow { id, text, label });
    }
    Ok(rows)
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drops later posts whose whitespace-normalized text was already seen.
pub fn dedupe(posts: Vec<Post>) -> Vec<Post> {
    let mut seen = HashSet::with_capacity(posts.len());
    posts.into_iter().filter(|p| seen.insert(normalize_whitespace(&p.text))).collect()
}

/// Nearest-rank percentile of an ascending-sorted, non-empty slice: the
/// smallest element whose rank is at least `p`% of the sample size.
pub fn nearest_rank(sorted: &[usize], p: u32) -> usize {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    sorted[rank.min(n) - 1]
}

/// Keeps posts whose word count lies within the inclusive nearest-rank
/// 10th–90th percentile band of `posts`.
pub fn length_filter(posts: Vec<Post>) -> Vec<Post> {
    if posts.is_empty() {
        return posts;
    }
    let mut lengths: Vec<usize> = posts.iter().map(Post::word_count).collect();
    lengths.sort_unstable();
    let lo = nearest_rank(&lengths, LOWER_PERCENTILE);
    let hi = nearest_rank(&lengths, UPPER_PERCENTILE);
    posts
        .into_iter()
        .filter(|p| {
            let n = p.word_count();
            lo <= n && n <= hi
        })
        .collect()
}

/// Result of mapping one raw label into a task space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMapping {
    Mapped(TaskLabel),
    /// Known label that deliberately has no place in this task (anxiety and
    /// PTSD posts in the binary task).
    Excluded,
    Unmapped,
}

fn normalize_label(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_severity(norm: &str) -> Option<Severity> {
    match norm {
        "minimum" | "0" => Some(Severity::Minimum),
        "mild" | "1" => Some(Severity::Mild),
        "moderate" | "2" => Some(Severity::Moderate),
        "severe" | "3" => Some(Severity::Severe),
        _ => None,
    }
}

fn parse_diagnosis(norm: &str) -> Option<Diagnosis> {
    match norm {
        "depression" | "depressed" | "depressive" => Some(Diagnosis::Depression),
        "anxiety" | "anxious" => Some(Diagnosis::Anxiety),
        "ptsd" | "post traumatic stress disorder" | "posttraumatic stress disorder" => Some(Diagnosis::Ptsd),
        _ => None,
    }
}

/// Maps one `(source, raw_label)` pair into `task`'s label space.
pub fn map_label(source: Source, raw_label: &str, task: TaskKind) -> LabelMapping {
    let norm = normalize_label(raw_label);
    let depression = LabelMapping::Mapped(TaskLabel::Binary(BinaryLabel::Depression));
    match (task, source) {
        (TaskKind::Binary, Source::Aita) => LabelMapping::Mapped(TaskLabel::Binary(BinaryLabel::NonDepression)),
        // every CAMS and DepressionEmo post is depression-related; their raw
        // labels annotate causes and emotions, not presence of depression
        (TaskKind::Binary, Source::Cams | Source::DepressionEmo) => depression,
        (TaskKind::Binary, Source::HelaDepDet) => {
            if parse_severity(&norm).is_some() || norm == "depression" {
                depression
            } else {
                LabelMapping::Unmapped
            }
        }
        (TaskKind::Binary, Source::Mhb | Source::Rmhd) => match parse_diagnosis(&norm) {
            Some(Diagnosis::Depression) => depression,
            Some(Diagnosis::Anxiety | Diagnosis::Ptsd) => LabelMapping::Excluded,
            None => LabelMapping::Unmapped,
        },
        (TaskKind::Severity, Source::HelaDepDet) => match parse_severity(&norm) {
            Some(s) => LabelMapping::Mapped(TaskLabel::Severity(s)),
            None => LabelMapping::Unmapped,
        },
        (TaskKind::Differential, Source::Mhb | Source::Rmhd) => match parse_diagnosis(&norm) {
            Some(d) => LabelMapping::Mapped(TaskLabel::Differential(d)),
            None => LabelMapping::Unmapped,
        },
        _ => LabelMapping::Unmapped,
    }
}

/// Maps every post into `task`'s label space. Excluded posts are skipped;
/// any unmapped post fails the whole call, listing every offender.
pub fn map_labels(posts: Vec<Post>, task: TaskKind) -> Result<Vec<LabeledExample>, CorpusError> {
    let mut examples = Vec::with_capacity(posts.len());
    let mut unmapped = Vec::new();
    for post in posts {
        match map_label(post.source, &post.raw_label, task) {
            LabelMapping::Mapped(label) => examples.push(LabeledExample { post, label }),
            LabelMapping::Excluded => {}
            LabelMapping::Unmapped => unmapped.push(UnmappedRecord {
                post_id: post.id.clone(),
                source: post.source,
                raw_label: post.raw_label.clone(),
            }),
        }
    }
    if unmapped.is_empty() {
        Ok(examples)
    } else {
        Err(CorpusError::UnmappedLabel { task, records: unmapped })
    }
}

/// Datasets a task is assembled from.
pub fn required_sources(task: TaskKind) -> &'static [Source] {
    match task {
        TaskKind::Binary => &Source::ALL,
        TaskKind::Severity => &[Source::HelaDepDet],
        TaskKind::Differential => &[Source::Mhb, Source::Rmhd],
    }
}

/// Post counts after each cleaning stage, summed over sources.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub loaded: usize,
    pub deduped: usize,
    pub filtered: usize,
    pub mapped: usize,
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub examples: Vec<LabeledExample>,
    pub counts: StageCounts,
    pub per_source: BTreeMap<Source, StageCounts>,
}

/// Cleans each required dataset (dedupe, then length filter), maps labels and
/// concatenates in source declaration order. Datasets not used by `task` are
/// ignored.
pub fn assemble_task(task: TaskKind, datasets: &BTreeMap<Source, Vec<Post>>) -> Result<Assembly, CorpusError> {
    let required = required_sources(task);
    if let Some(&missing) = required.iter().find(|s| !datasets.contains_key(s)) {
        return Err(CorpusError::MissingDataset { task, source_name: missing });
    }

    let mut examples = Vec::new();
    let mut counts = StageCounts::default();
    let mut per_source = BTreeMap::new();
    for &source in required {
        let posts = datasets[&source].clone();
        let mut c = StageCounts { loaded: posts.len(), ..Default::default() };
        let posts = dedupe(posts);
        c.deduped = posts.len();
        let posts = length_filter(posts);
        c.filtered = posts.len();
        let mapped = map_labels(posts, task)?;
        c.mapped = mapped.len();

        counts.loaded += c.loaded;
        counts.deduped += c.deduped;
        counts.filtered += c.filtered;
        counts.mapped += c.mapped;
        per_source.insert(source, c);
        examples.extend(mapped);
    }
    Ok(Assembly { examples, counts, per_source })
}

/// A stratified, seeded train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCorpus {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub seed: u64,
    pub train_fraction: f64,
    /// Labels with a single example; that example went to train.
    pub degenerate_labels: Vec<TaskLabel>,
}

impl SplitCorpus {
    /// Order-independent hash of the train and test id sets.
    pub fn fingerprint(&self) -> String {
        let train = hashing::id_fingerprint(self.train.iter().map(|e| e.post.id.as_str()));
        let test = hashing::id_fingerprint(self.test.iter().map(|e| e.post.id.as_str()));
        hashing::sha256_hex(&[&train, &test])
    }

    pub fn train_fingerprint(&self) -> String {
        hashing::id_fingerprint(self.train.iter().map(|e| e.post.id.as_str()))
    }
}

/// Stratified split: within each label group (in label order) the indices are
/// shuffled by one seeded generator and the first `round(fraction * n)` go to
/// train. Both partitions keep the input order.
pub fn split(examples: Vec<LabeledExample>, train_fraction: f64, seed: u64) -> Result<SplitCorpus, CorpusError> {
    if examples.len() < 2 {
        return Err(CorpusError::TooFewExamples(examples.len()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }

    let mut groups: BTreeMap<TaskLabel, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        groups.entry(ex.label).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; examples.len()];
    let mut degenerate_labels = Vec::new();
    for (label, mut idx) in groups {
        if idx.len() == 1 {
            log::warn!("label {label} has a single example; it goes to the training split");
            degenerate_labels.push(label);
        }
        idx.shuffle(&mut rng);
        let take = (train_fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..take.min(idx.len())] {
            in_train[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ex, is_train) in examples.into_iter().zip(in_train) {
        if is_train {
            train.push(ex);
        } else {
            test.push(ex);
        }
    }
    Ok(SplitCorpus { train, test, seed, train_fraction, degenerate_labels })
}

/// One line of the canonical corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub source: Source,
    pub text: String,
    pub label: String,
    pub split: String,
}

/// Writes `split` as one JSON record per line, train rows first.
pub fn write_corpus<W: Write>(split: &SplitCorpus, mut out: W) -> std::io::Result<()> {
    let parts = [("train", &split.train), ("test", &split.test)];
    for (name, rows) in parts {
        for ex in rows {
            let record = CorpusRecord {
                id: ex.post.id.clone(),
                source: ex.post.source,
                text: ex.post.text.clone(),
                label: ex.label.name().to_string(),
                split: name.to_string(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
