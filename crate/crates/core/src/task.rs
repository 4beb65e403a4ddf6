//! Task kinds and their label spaces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the three classification experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Depression vs. non-depression.
    Binary,
    /// Four ordinal depression severity grades.
    Severity,
    /// Depression vs. anxiety vs. PTSD.
    Differential,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Binary, TaskKind::Severity, TaskKind::Differential];

    /// The label space in declared order. This order defines class indices,
    /// tie-breaking, and the column order of every report.
    pub fn labels(self) -> Vec<TaskLabel> {
        match self {
            TaskKind::Binary => vec![
                TaskLabel::Binary(BinaryLabel::Depression),
                TaskLabel::Binary(BinaryLabel::NonDepression),
            ],
            TaskKind::Severity => Severity::ALL.iter().map(|s| TaskLabel::Severity(*s)).collect(),
            TaskKind::Differential => vec![
                TaskLabel::Differential(Diagnosis::Depression),
                TaskLabel::Differential(Diagnosis::Anxiety),
                TaskLabel::Differential(Diagnosis::Ptsd),
            ],
        }
    }

    pub fn label_names(self) -> Vec<&'static str> {
        self.labels().into_iter().map(TaskLabel::name).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Binary => "binary",
            TaskKind::Severity => "severity",
            TaskKind::Differential => "differential",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(TaskKind::Binary),
            "severity" => Ok(TaskKind::Severity),
            "differential" => Ok(TaskKind::Differential),
            other => Err(format!("unknown task `{other}` (expected binary, severity or differential)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryLabel {
    Depression,
    NonDepression,
}

/// Ordinal depression severity, `Minimum = 0` through `Severe = 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Minimum = 0,
    Mild = 1,
    Moderate = 2,
    Severe = 3,
}

impl Severity {
    pub const ALL: [Severity; 4] = [Severity::Minimum, Severity::Mild, Severity::Moderate, Severity::Severe];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(v: u8) -> Option<Severity> {
        Severity::ALL.get(v as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    Depression,
    Anxiety,
    Ptsd,
}

/// A label value tagged with the task space it belongs to.
///
/// `Depression` exists in both the binary and differential spaces; the tag
/// keeps the two distinct so a label always belongs to exactly one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskLabel {
    Binary(BinaryLabel),
    Severity(Severity),
    Differential(Diagnosis),
}

impl TaskLabel {
    pub fn task(self) -> TaskKind {
        match self {
            TaskLabel::Binary(_) => TaskKind::Binary,
            TaskLabel::Severity(_) => TaskKind::Severity,
            TaskLabel::Differential(_) => TaskKind::Differential,
        }
    }

    /// Display name, as used in prompts and report headers.
    pub fn name(self) -> &'static str {
        match self {
            TaskLabel::Binary(BinaryLabel::Depression) => "Depression",
            TaskLabel::Binary(BinaryLabel::NonDepression) => "Non-depression",
            TaskLabel::Severity(Severity::Minimum) => "Minimum",
            TaskLabel::Severity(Severity::Mild) => "Mild",
            TaskLabel::Severity(Severity::Moderate) => "Moderate",
            TaskLabel::Severity(Severity::Severe) => "Severe",
            TaskLabel::Differential(Diagnosis::Depression) => "Depression",
            TaskLabel::Differential(Diagnosis::Anxiety) => "Anxiety",
            TaskLabel::Differential(Diagnosis::Ptsd) => "PTSD",
        }
    }

    /// Position of this label in its task's declared label order.
    pub fn index(self) -> usize {
        self.task()
            .labels()
            .iter()
            .position(|l| *l == self)
            .expect("label is a member of its own task space")
    }

    /// Inverse of [`TaskLabel::name`] within one task space; case-insensitive.
    pub fn from_name(task: TaskKind, name: &str) -> Option<TaskLabel> {
        task.labels().into_iter().find(|l| l.name().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
