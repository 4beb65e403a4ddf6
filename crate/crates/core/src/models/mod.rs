//! Supervised classifiers: L2 logistic regression, linear SVM and random
//! forest, all deterministic given a [`TrainConfig`].

mod forest;
mod linear;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::TaskLabel;

pub use forest::{train_random_forest, ForestModel, Node, Tree};
pub use linear::{
    hinge_objective, logistic_gradient, logistic_objective, train_linear_svm, train_logreg, LinearFamily, LinearModel,
};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("dimension mismatch: model expects {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("need at least {needed} rows, got {actual}")]
    TooFewRows { needed: usize, actual: usize },
    #[error("ragged matrix: row {row} has {actual} columns, expected {expected}")]
    Ragged { row: usize, expected: usize, actual: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Row-major dense matrix with one post id per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    row_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, row_ids: Vec<String>) -> Result<Self, ModelError> {
        if rows.len() != row_ids.len() {
            return Err(ModelError::LengthMismatch { rows: rows.len(), labels: row_ids.len() });
        }
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(ModelError::Ragged { row: i, expected: cols, actual: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteInput);
            }
            values.extend_from_slice(row);
        }
        Ok(FeatureMatrix { values, rows: rows.len(), cols, row_ids })
    }

    /// Matrix with ids `row0`, `row1`, ...
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let ids = (0..rows.len()).map(|i| format!("row{i}")).collect();
        FeatureMatrix::new(rows, ids)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// New matrix with rows in `order`.
    pub fn select(&self, order: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(order.len() * self.cols);
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix { values, rows: order.len(), cols: self.cols, row_ids: order.iter().map(|&i| self.row_ids[i].clone()).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Inverse regularization strength; multiplies the data term.
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { c: 1.0, max_iter: 1000, tol: 1e-6, n_trees: 100, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if self.max_iter == 0 || self.n_trees == 0 {
            return Err(ModelError::InvalidConfig("max_iter and n_trees must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(ModelError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Appends standardized lexicon values to an embedding.
pub fn concat_features(embedding: &[f64], lexicon: &[f64]) -> Result<Vec<f64>, ModelError> {
    if embedding.iter().chain(lexicon).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let mut out = Vec::with_capacity(embedding.len() + lexicon.len());
    out.extend_from_slice(embedding);
    out.extend_from_slice(lexicon);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    LogisticRegression,
    LinearSvm,
    RandomForest,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::LogisticRegression, ModelFamily::LinearSvm, ModelFamily::RandomForest];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::LogisticRegression => "logistic_regression",
            ModelFamily::LinearSvm => "linear_svm",
            ModelFamily::RandomForest => "random_forest",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "logistic_regression" | "logreg" | "logistic" => Ok(ModelFamily::LogisticRegression),
            "linear_svm" | "svm" => Ok(ModelFamily::LinearSvm),
            "random_forest" | "forest" | "rf" => Ok(ModelFamily::RandomForest),
            other => Err(format!("unknown model family `{other}`")),
        }
    }
}

/// Either kind of trained model, serialized with its family tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family_kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Linear(LinearModel),
    Forest(ForestModel),
}

impl TrainedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            TrainedModel::Linear(m) => match m.family {
                LinearFamily::Logistic => ModelFamily::LogisticRegression,
                LinearFamily::Hinge => ModelFamily::LinearSvm,
            },
            TrainedModel::Forest(_) => ModelFamily::RandomForest,
        }
    }

    pub fn classes(&self) -> &[TaskLabel] {
        match self {
            TrainedModel::Linear(m) => &m.classes,
            TrainedModel::Forest(m) => &m.classes,
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<TaskLabel>, ModelError> {
        match self {
            TrainedModel::Linear(m) => m.predict(x),
            TrainedModel::Forest(m) => m.predict(x),
        }
    }

    /// Full-precision structured text; equal models give equal bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn train(family: ModelFamily, x: &FeatureMatrix, y: &[TaskLabel], cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    Ok(match family {
        ModelFamily::LogisticRegression => TrainedModel::Linear(train_logreg(x, y, cfg)?),
        ModelFamily::LinearSvm => TrainedModel::Linear(train_linear_svm(x, y, cfg)?),
        ModelFamily::RandomForest => TrainedModel::Forest(train_random_forest(x, y, cfg)?),
    })
}

/// Sorted distinct labels of `y`.
fn class_list(y: &[TaskLabel]) -> Vec<TaskLabel> {
    let mut classes = y.to_vec();
    classes.sort();
    classes.dedup();
    classes
}

fn check_training_input(x: &FeatureMatrix, y: &[TaskLabel]) -> Result<(), ModelError> {
    if x.rows() != y.len() {
        return Err(ModelError::LengthMismatch { rows: x.rows(), labels: y.len() });
    }
    if x.rows() < 2 {
        return Err(ModelError::TooFewRows { needed: 2, actual: x.rows() });
    }
    Ok(())
}
