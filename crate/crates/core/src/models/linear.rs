//! One-vs-rest linear classifiers.
//!
//! Each binary subproblem with targets `y_i` in {-1, +1} minimizes
//!
//! ```text
//! J(w, b) = 0.5 * |w|^2 + C * sum_i loss(y_i * (w . x_i + b))
//! ```
//!
//! with the bias unregularized. Logistic loss is minimized by full-batch
//! gradient descent with Armijo backtracking; hinge loss by subgradient
//! descent with step `1 / (1 + t)`, returning the best iterate seen.
//!
//! Rows are visited in a canonical order (sorted by feature bits, then
//! target) so every sum, and therefore the trained model, is bitwise
//! independent of the input row order.

use serde::{Deserialize, Serialize};

use super::{check_training_input, class_list, FeatureMatrix, ModelError, TrainConfig};
use crate::task::TaskLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearFamily {
    Logistic,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub family: LinearFamily,
    pub classes: Vec<TaskLabel>,
    /// One weight vector per scorer: a single scorer (for `classes[0]`) when
    /// there are two classes, otherwise one per class.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub config: TrainConfig,
    /// Iterations used by each subproblem.
    pub iterations: Vec<usize>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Raw scorer outputs for one row.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, x) + b).collect()
    }

    /// Binary: `classes[0]` when the score is >= 0. Multi-class: argmax,
    /// earliest class on ties.
    pub fn predict_row(&self, x: &[f64]) -> TaskLabel {
        let scores = self.scores(x);
        if self.classes.len() == 2 {
            return if scores[0] >= 0.0 { self.classes[0] } else { self.classes[1] };
        }
        let mut best = 0;
        for (k, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = k;
            }
        }
        self.classes[best]
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<TaskLabel>, ModelError> {
        if x.cols() != self.dim() {
            return Err(ModelError::DimensionMismatch { expected: self.dim(), actual: x.cols() });
        }
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `1 / (1 + exp(-z))` without overflow.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic objective for targets in {-1, +1}.
pub fn logistic_objective(w: &[f64], b: f64, x: &FeatureMatrix, y: &[f64], c: f64) -> f64 {
    let data: f64 = x.iter_rows().zip(y).map(|(r, &yi)| softplus(-yi * (dot(w, r) + b))).sum();
    0.5 * dot(w, w) + c * data
}

/// Gradient of [`logistic_objective`] as `(dJ/dw, dJ/db)`.
pub fn logistic_gradient(w: &[f64], b: f64, x: &FeatureMatrix, y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for (r, &yi) in x.iter_rows().zip(y) {
        // d/dm softplus(-y m) = -y * sigmoid(-y m)
        let coef = -c * yi * sigmoid(-yi * (dot(w, r) + b));
        for (g, xv) in gw.iter_mut().zip(r) {
            *g += coef * xv;
        }
        gb += coef;
    }
    (gw, gb)
}

/// Hinge objective for targets in {-1, +1}.
pub fn hinge_objective(w: &[f64], b: f64, x: &FeatureMatrix, y: &[f64], c: f64) -> f64 {
    let data: f64 = x.iter_rows().zip(y).map(|(r, &yi)| (1.0 - yi * (dot(w, r) + b)).max(0.0)).sum();
    0.5 * dot(w, w) + c * data
}

fn hinge_subgradient(w: &[f64], b: f64, x: &FeatureMatrix, y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for (r, &yi) in x.iter_rows().zip(y) {
        if yi * (dot(w, r) + b) < 1.0 {
            for (g, xv) in gw.iter_mut().zip(r) {
                *g -= c * yi * xv;
            }
            gb -= c * yi;
        }
    }
    (gw, gb)
}

fn norm2(gw: &[f64], gb: f64) -> f64 {
    (dot(gw, gw) + gb * gb).sqrt()
}

struct Solution {
    w: Vec<f64>,
    b: f64,
    iterations: usize,
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;

fn minimize_logistic(x: &FeatureMatrix, y: &[f64], cfg: &TrainConfig) -> Solution {
    let d = x.cols();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut f = logistic_objective(&w, b, x, y, cfg.c);
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let (gw, gb) = logistic_gradient(&w, b, x, y, cfg.c);
        let gnorm = norm2(&gw, gb);
        if gnorm <= cfg.tol {
            break;
        }
        iterations += 1;
        let g2 = gnorm * gnorm;
        // grow the step back after each accepted iteration, then backtrack
        step = (step * 2.0).min(1e6);
        loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let b_new = b - step * gb;
            let f_new = logistic_objective(&w_new, b_new, x, y, cfg.c);
            if f_new <= f - ARMIJO * step * g2 {
                w = w_new;
                b = b_new;
                f = f_new;
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                return Solution { w, b, iterations };
            }
        }
    }
    Solution { w, b, iterations }
}

fn minimize_hinge(x: &FeatureMatrix, y: &[f64], cfg: &TrainConfig) -> Solution {
    let d = x.cols();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut best = (w.clone(), b, hinge_objective(&w, b, x, y, cfg.c));
    let mut iterations = 0;
    for t in 0..cfg.max_iter {
        let (gw, gb) = hinge_subgradient(&w, b, x, y, cfg.c);
        if norm2(&gw, gb) <= cfg.tol {
            break;
        }
        iterations = t + 1;
        let eta = 1.0 / (1.0 + t as f64);
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= eta * gi;
        }
        b -= eta * gb;
        let f = hinge_objective(&w, b, x, y, cfg.c);
        if f < best.2 {
            best = (w.clone(), b, f);
        }
    }
    Solution { w: best.0, b: best.1, iterations }
}

/// Row order that depends only on row contents.
fn canonical_order(x: &FeatureMatrix, y: &[TaskLabel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].cmp(&y[b]))
    });
    order
}

fn train_linear(
    family: LinearFamily,
    x: &FeatureMatrix,
    y: &[TaskLabel],
    cfg: &TrainConfig,
) -> Result<LinearModel, ModelError> {
    cfg.validate()?;
    check_training_input(x, y)?;
    let classes = class_list(y);
    if classes.len() < 2 {
        return Err(ModelError::SingleClass);
    }

    let order = canonical_order(x, y);
    let xs = x.select(&order);
    let ys: Vec<TaskLabel> = order.iter().map(|&i| y[i]).collect();

    let scorers = if classes.len() == 2 { 1 } else { classes.len() };
    let solutions: Vec<Solution> = {
        use rayon::prelude::*;
        (0..scorers)
            .into_par_iter()
            .map(|k| {
                let targets: Vec<f64> = ys.iter().map(|l| if *l == classes[k] { 1.0 } else { -1.0 }).collect();
                match family {
                    LinearFamily::Logistic => minimize_logistic(&xs, &targets, cfg),
                    LinearFamily::Hinge => minimize_hinge(&xs, &targets, cfg),
                }
            })
            .collect()
    };

    let mut model = LinearModel {
        family,
        classes,
        weights: Vec::with_capacity(scorers),
        biases: Vec::with_capacity(scorers),
        config: *cfg,
        iterations: Vec::with_capacity(scorers),
    };
    for s in solutions {
        model.weights.push(s.w);
        model.biases.push(s.b);
        model.iterations.push(s.iterations);
    }
    Ok(model)
}

/// L2-regularized logistic regression, one-vs-rest.
pub fn train_logreg(x: &FeatureMatrix, y: &[TaskLabel], cfg: &TrainConfig) -> Result<LinearModel, ModelError> {
    train_linear(LinearFamily::Logistic, x, y, cfg)
}

/// Linear soft-margin SVM (hinge loss), one-vs-rest.
pub fn train_linear_svm(x: &FeatureMatrix, y: &[TaskLabel], cfg: &TrainConfig) -> Result<LinearModel, ModelError> {
    train_linear(LinearFamily::Hinge, x, y, cfg)
}
