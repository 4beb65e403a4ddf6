//! Report files and cross-model comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::{self, MetricsReport};
use crate::task::TaskKind;

use super::{PipelineError, RunManifest};

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const F1_FILE: &str = "per_class_f1.csv";

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayClass {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayAverages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics rounded to 4 decimals for reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayMetrics {
    pub accuracy: f64,
    pub per_class: Vec<DisplayClass>,
    pub macro_avg: DisplayAverages,
    pub weighted: DisplayAverages,
    pub micro_f1: f64,
    pub unparseable: u64,
    /// Counts over the total of parsed predictions.
    pub normalized_confusion: Vec<Vec<f64>>,
}

impl DisplayMetrics {
    pub fn from_report(r: &MetricsReport) -> Self {
        let avg = |a: &eval::Averages| DisplayAverages {
            precision: round4(a.precision),
            recall: round4(a.recall),
            f1: round4(a.f1),
        };
        let normalized = eval::normalize_confusion(&r.confusion)
            .map(|m| m.into_iter().map(|row| row.into_iter().map(round4).collect()).collect())
            .unwrap_or_default();
        DisplayMetrics {
            accuracy: round4(r.accuracy),
            per_class: r
                .per_class
                .iter()
                .map(|(name, m)| DisplayClass {
                    class: name.clone(),
                    precision: round4(m.precision),
                    recall: round4(m.recall),
                    f1: round4(m.f1),
                    support: m.support,
                })
                .collect(),
            macro_avg: avg(&r.macro_avg),
            weighted: avg(&r.weighted),
            micro_f1: round4(r.micro_f1),
            unparseable: r.confusion.unparseable_count,
            normalized_confusion: normalized,
        }
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub model: String,
    pub task: TaskKind,
    pub split_fingerprint: String,
    pub display: DisplayMetrics,
    /// Full-precision values.
    pub exact: MetricsReport,
}

impl MetricsDocument {
    pub fn new(model: &str, task: TaskKind, split_fingerprint: &str, report: &MetricsReport) -> Self {
        MetricsDocument {
            model: model.to_string(),
            task,
            split_fingerprint: split_fingerprint.to_string(),
            display: DisplayMetrics::from_report(report),
            exact: report.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let unreadable = |message: String| PipelineError::UnreadableReport { path: path.to_path_buf(), message };
        let text = fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub metrics: PathBuf,
    pub confusion: PathBuf,
    pub manifest: PathBuf,
    pub per_class_f1: PathBuf,
}

/// Writes `content` to a sibling temp file, then renames it over `path`.
fn write_atomic(path: &Path, content: &str) -> Result<(), PipelineError> {
    let unwritable = |e: std::io::Error| PipelineError::UnwritableOutput { path: path.to_path_buf(), message: e.to_string() };
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, content).map_err(unwritable)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        unwritable(e)
    })
}

/// Writes the four report files into `dir`, replacing any earlier ones.
pub fn emit_report(report: &MetricsReport, manifest: &RunManifest, dir: &Path) -> Result<ReportPaths, PipelineError> {
    fs::create_dir_all(dir)
        .map_err(|e| PipelineError::UnwritableOutput { path: dir.to_path_buf(), message: e.to_string() })?;
    let paths = ReportPaths {
        metrics: dir.join(METRICS_FILE),
        confusion: dir.join(CONFUSION_FILE),
        manifest: dir.join(MANIFEST_FILE),
        per_class_f1: dir.join(F1_FILE),
    };

    let doc = MetricsDocument::new(&manifest.model_tag, manifest.config.task, &manifest.split_fingerprint, report);
    let mut metrics = serde_json::to_string_pretty(&doc).expect("metrics serialize");
    metrics.push('\n');
    write_atomic(&paths.metrics, &metrics)?;
    write_atomic(&paths.confusion, &report.confusion.to_csv())?;

    let single = BTreeMap::from([(manifest.model_tag.clone(), report.clone())]);
    let table = eval::per_class_f1_table(&single).expect("a single report has one class list");
    write_atomic(&paths.per_class_f1, &table.to_csv())?;

    let mut m = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    m.push('\n');
    write_atomic(&paths.manifest, &m)?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow {
    pub model: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub class_f1: Vec<f64>,
}

/// Models sorted by accuracy, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub classes: Vec<String>,
    pub split_fingerprint: String,
    pub rows: Vec<RankingRow>,
}

impl Ranking {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,model,accuracy,macro_f1,weighted_f1");
        for c in &self.classes {
            let _ = write!(out, ",f1_{c}");
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{},{},{:.4},{:.4},{:.4}", i + 1, row.model, row.accuracy, row.macro_f1, row.weighted_f1);
            for f in &row.class_f1 {
                let _ = write!(out, ",{f:.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// Ranks reports of the same test split by accuracy (descending; ties keep
/// input order).
pub fn compare_models(docs: &[MetricsDocument]) -> Result<Ranking, PipelineError> {
    if docs.len() < 2 {
        return Err(PipelineError::TooFewReports(docs.len()));
    }
    let first = &docs[0];
    if let Some(other) = docs.iter().find(|d| d.split_fingerprint != first.split_fingerprint) {
        return Err(PipelineError::SplitMismatch {
            first: first.model.clone(),
            other: other.model.clone(),
        });
    }
    let classes: Vec<String> = first.exact.class_names().into_iter().map(str::to_string).collect();
    let mut rows = Vec::with_capacity(docs.len());
    for d in docs {
        if d.exact.class_names() != classes {
            return Err(PipelineError::Eval(eval::EvalError::InconsistentClassLists));
        }
        rows.push(RankingRow {
            model: d.model.clone(),
            accuracy: d.exact.accuracy,
            macro_f1: d.exact.macro_avg.f1,
            weighted_f1: d.exact.weighted.f1,
            class_f1: d.exact.per_class.iter().map(|(_, m)| m.f1).collect(),
        });
    }
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    Ok(Ranking { classes, split_fingerprint: first.split_fingerprint.clone(), rows })
}
