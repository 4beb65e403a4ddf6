//! Accuracy, per-class precision/recall/F1 and confusion matrices.
//!
//! Zero-shot and supervised predictions go through the same code. An
//! unparseable prediction stays in the denominator: it lowers accuracy and
//! recall for its true class but is not counted as a prediction of any class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::TaskLabel;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("true label {0} is not in the class list")]
    UnknownTrueLabel(TaskLabel),
    #[error("predicted label {0} is not in the class list")]
    UnknownPredictedLabel(TaskLabel),
    #[error("no examples to evaluate")]
    EmptyMatrix,
    #[error("reports do not share one class list")]
    InconsistentClassLists,
}

/// A prediction; `None` marks an unparseable LLM response.
pub type Prediction = Option<TaskLabel>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<TaskLabel>,
    /// `counts[true][predicted]`
    pub counts: Vec<Vec<u64>>,
    /// Unparseable predictions, by true class.
    pub unparseable_by_class: Vec<u64>,
    pub unparseable_count: u64,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<TaskLabel>) -> Self {
        let k = classes.len();
        ConfusionMatrix { classes, counts: vec![vec![0; k]; k], unparseable_by_class: vec![0; k], unparseable_count: 0 }
    }

    /// Parsed predictions plus unparseable ones.
    pub fn total(&self) -> u64 {
        self.parsed_total() + self.unparseable_count
    }

    pub fn parsed_total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Confusion matrix as CSV, rows = true class, columns = predicted class,
    /// with a trailing `Unparseable` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for c in &self.classes {
            let _ = write!(out, ",{}", c.name());
        }
        out.push_str(",Unparseable\n");
        for (i, c) in self.classes.iter().enumerate() {
            out.push_str(c.name());
            for v in &self.counts[i] {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", self.unparseable_by_class[i]);
        }
        out
    }
}

/// Tallies `(truth, prediction)` pairs over `classes`.
pub fn confusion(classes: &[TaskLabel], y_true: &[TaskLabel], y_pred: &[Prediction]) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch { truth: y_true.len(), predicted: y_pred.len() });
    }
    let index = |l: &TaskLabel| classes.iter().position(|c| c == l);
    let mut cm = ConfusionMatrix::zeros(classes.to_vec());
    for (t, p) in y_true.iter().zip(y_pred) {
        let ti = index(t).ok_or(EvalError::UnknownTrueLabel(*t))?;
        match p {
            Some(p) => {
                let pi = index(p).ok_or(EvalError::UnknownPredictedLabel(*p))?;
                cm.counts[ti][pi] += 1;
            }
            None => {
                cm.unparseable_by_class[ti] += 1;
                cm.unparseable_count += 1;
            }
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Keyed by label name, in class order.
    pub per_class: Vec<(String, ClassMetrics)>,
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub micro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.per_class.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Metrics of `classes[0]`, the positive class of a binary task.
    pub fn positive_class(&self) -> &ClassMetrics {
        &self.per_class[0].1
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Computes every metric from a confusion matrix. Empty denominators give 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = cm.classes.len();
    let mut per_class = Vec::with_capacity(k);
    for i in 0..k {
        let tp = cm.counts[i][i];
        let predicted: u64 = (0..k).map(|r| cm.counts[r][i]).sum();
        let support: u64 = cm.counts[i].iter().sum::<u64>() + cm.unparseable_by_class[i];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_class.push((cm.classes[i].name().to_string(), ClassMetrics { precision, recall, f1: harmonic(precision, recall), support }));
    }

    let kf = k as f64;
    let macro_avg = Averages {
        precision: per_class.iter().map(|(_, m)| m.precision).sum::<f64>() / kf,
        recall: per_class.iter().map(|(_, m)| m.recall).sum::<f64>() / kf,
        f1: per_class.iter().map(|(_, m)| m.f1).sum::<f64>() / kf,
    };
    let tf = total as f64;
    let weighted = Averages {
        precision: per_class.iter().map(|(_, m)| m.precision * m.support as f64).sum::<f64>() / tf,
        recall: per_class.iter().map(|(_, m)| m.recall * m.support as f64).sum::<f64>() / tf,
        f1: per_class.iter().map(|(_, m)| m.f1 * m.support as f64).sum::<f64>() / tf,
    };

    // micro: pooled TP / pooled predictions and pooled TP / pooled support
    let trace = cm.trace();
    let micro_f1 = harmonic(ratio(trace, cm.parsed_total()), ratio(trace, total));

    Ok(MetricsReport { accuracy: ratio(trace, total), per_class, macro_avg, weighted, micro_f1, confusion: cm.clone() })
}

/// Cell counts divided by the grand total of parsed predictions.
pub fn normalize_confusion(cm: &ConfusionMatrix) -> Result<Vec<Vec<f64>>, EvalError> {
    let total = cm.parsed_total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    Ok(cm.counts.iter().map(|row| row.iter().map(|&c| c as f64 / total as f64).collect()).collect())
}

/// Models x classes table of F1 scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Table {
    pub classes: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl F1Table {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (model, cells) in &self.rows {
            out.push_str(model);
            for v in cells {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn per_class_f1_table(reports: &BTreeMap<String, MetricsReport>) -> Result<F1Table, EvalError> {
    let mut classes: Option<Vec<String>> = None;
    let mut rows = Vec::with_capacity(reports.len());
    for (model, report) in reports {
        let names: Vec<String> = report.class_names().into_iter().map(str::to_string).collect();
        match &classes {
            None => classes = Some(names),
            Some(c) if *c != names => return Err(EvalError::InconsistentClassLists),
            Some(_) => {}
        }
        rows.push((model.clone(), report.per_class.iter().map(|(_, m)| m.f1).collect()));
    }
    Ok(F1Table { classes: classes.unwrap_or_default(), rows })
}
