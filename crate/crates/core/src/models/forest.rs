//! Random forest of unpruned Gini trees.
//!
//! Tree `t` draws its bootstrap sample and feature subsets from a generator
//! seeded with `seed + t`, so trees can be built in parallel and the forest
//! is still identical run to run.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training_input, class_list, FeatureMatrix, ModelError, TrainConfig};
use crate::task::TaskLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Per-class training counts that reached this leaf.
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index into the class list of the majority class at the row's leaf.
    pub fn vote(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => return argmax_first(counts),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

fn argmax_first(counts: &[u32]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub seed: u64,
    pub classes: Vec<TaskLabel>,
    pub n_features: usize,
    pub config: TrainConfig,
}

impl ForestModel {
    /// Majority vote over trees; ties go to the earliest class.
    pub fn predict_row(&self, x: &[f64]) -> TaskLabel {
        let mut votes = vec![0u32; self.classes.len()];
        for tree in &self.trees {
            votes[tree.vote(x)] += 1;
        }
        self.classes[argmax_first(&votes)]
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<TaskLabel>, ModelError> {
        if x.cols() != self.n_features {
            return Err(ModelError::DimensionMismatch { expected: self.n_features, actual: x.cols() });
        }
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }
}

pub fn train_random_forest(x: &FeatureMatrix, y: &[TaskLabel], cfg: &TrainConfig) -> Result<ForestModel, ModelError> {
    cfg.validate()?;
    check_training_input(x, y)?;
    let classes = class_list(y);
    let targets: Vec<usize> = y.iter().map(|l| classes.binary_search(l).expect("label is in class list")).collect();
    let n_features = x.cols();
    let max_features = (n_features as f64).sqrt().ceil() as usize;

    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            let sample: Vec<usize> = (0..x.rows()).map(|_| rng.random_range(0..x.rows())).collect();
            TreeBuilder { x, targets: &targets, n_classes: classes.len(), max_features, rng, nodes: Vec::new() }.build(sample)
        })
        .collect();

    Ok(ForestModel { trees, seed: cfg.seed, classes, n_features, config: *cfg })
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    targets: &'a [usize],
    n_classes: usize,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl TreeBuilder<'_> {
    fn build(mut self, sample: Vec<usize>) -> Tree {
        // explicit stack: (node slot, rows reaching it)
        self.nodes.push(Node::Leaf { counts: Vec::new() });
        let mut stack = vec![(0usize, sample)];
        while let Some((slot, rows)) = stack.pop() {
            let counts = self.counts(&rows);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure || rows.len() < 2 { None } else { self.best_split(&rows) };
            match split {
                None => self.nodes[slot] = Node::Leaf { counts },
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| self.x.row(i)[s.feature] <= s.threshold);
                    let left = self.nodes.len();
                    self.nodes.push(Node::Leaf { counts: Vec::new() });
                    let right = self.nodes.len();
                    self.nodes.push(Node::Leaf { counts: Vec::new() });
                    self.nodes[slot] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
                    stack.push((right, r));
                    stack.push((left, l));
                }
            }
        }
        Tree { nodes: self.nodes }
    }

    fn counts(&self, rows: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in rows {
            counts[self.targets[i]] += 1;
        }
        counts
    }

    /// Examines `max_features` features drawn without replacement; if none
    /// of them can split the node, keeps drawing until one can or all are
    /// exhausted.
    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let mut features: Vec<usize> = (0..self.x.cols()).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<BestSplit> = None;
        for (examined, &f) in features.iter().enumerate() {
            if examined >= self.max_features && best.is_some() {
                break;
            }
            if let Some(candidate) = self.best_threshold(rows, f) {
                if best.as_ref().is_none_or(|b| candidate.impurity < b.impurity) {
                    best = Some(candidate);
                }
            }
        }
        best
    }

    fn best_threshold(&self, rows: &[usize], feature: usize) -> Option<BestSplit> {
        let mut pairs: Vec<(f64, usize)> = rows.iter().map(|&i| (self.x.row(i)[feature], self.targets[i])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if pairs.first()?.0 == pairs.last()?.0 {
            return None;
        }

        let n = pairs.len() as f64;
        let mut right = vec![0f64; self.n_classes];
        for &(_, k) in &pairs {
            right[k] += 1.0;
        }
        let mut left = vec![0f64; self.n_classes];
        let mut best: Option<BestSplit> = None;
        for i in 0..pairs.len() - 1 {
            let (v, k) = pairs[i];
            left[k] += 1.0;
            right[k] -= 1.0;
            let next = pairs[i + 1].0;
            if v == next {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = n - nl;
            let impurity = (nl * gini(&left, nl) + nr * gini(&right, nr)) / n;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                best = Some(BestSplit { feature, threshold, impurity });
            }
        }
        best
    }
}

fn gini(counts: &[f64], total: f64) -> f64 {
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{BinaryLabel, Severity};

    const POS: TaskLabel = TaskLabel::Binary(BinaryLabel::Depression);
    const NEG: TaskLabel = TaskLabel::Binary(BinaryLabel::NonDepression);

    fn xor(reps: usize) -> (FeatureMatrix, Vec<TaskLabel>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for r in 0..reps {
            let jitter = r as f64 * 0.001;
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                rows.push(vec![a + jitter, b - jitter]);
                y.push(if (a == 1.0) ^ (b == 1.0) { POS } else { NEG });
            }
        }
        (FeatureMatrix::from_rows(rows).unwrap(), y)
    }

    #[test]
    fn single_class_forest_predicts_it() {
        let x = FeatureMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]]).unwrap();
        let y = vec![TaskLabel::Severity(Severity::Mild); 3];
        let cfg = TrainConfig { n_trees: 5, ..Default::default() };
        let f = train_random_forest(&x, &y, &cfg).unwrap();
        assert!(f.predict(&x).unwrap().iter().all(|&l| l == y[0]));
        assert!(f.predict_row(&[-100.0, 100.0]) == y[0]);
    }

    #[test]
    fn xor_fits() {
        let (x, y) = xor(25);
        let f = train_random_forest(&x, &y, &TrainConfig { seed: 7, ..Default::default() }).unwrap();
        let pred = f.predict(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = xor(10);
        let cfg = TrainConfig { n_trees: 20, seed: 11, ..Default::default() };
        let a = train_random_forest(&x, &y, &cfg).unwrap();
        let b = train_random_forest(&x, &y, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = train_random_forest(&x, &y, &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn structure_invariants() {
        let (x, y) = xor(5);
        let f = train_random_forest(&x, &y, &TrainConfig { n_trees: 10, ..Default::default() }).unwrap();
        for tree in &f.trees {
            for node in &tree.nodes {
                match node {
                    Node::Split { feature, left, right, .. } => {
                        assert!(*feature < x.cols());
                        assert!(*left < tree.nodes.len() && *right < tree.nodes.len());
                    }
                    Node::Leaf { counts } => assert!(counts.iter().sum::<u32>() > 0),
                }
            }
        }
    }

    #[test]
    fn conflicting_duplicates_make_an_impure_leaf() {
        let x = FeatureMatrix::from_rows(vec![vec![1.0], vec![1.0]]).unwrap();
        let f = train_random_forest(&x, &[POS, NEG], &TrainConfig { n_trees: 3, ..Default::default() }).unwrap();
        for tree in &f.trees {
            assert_eq!(tree.nodes.len(), 1);
        }
    }

    #[test]
    fn dimension_checked() {
        let (x, y) = xor(2);
        let f = train_random_forest(&x, &y, &TrainConfig { n_trees: 2, ..Default::default() }).unwrap();
        let narrow = FeatureMatrix::from_rows(vec![vec![0.0]]).unwrap();
        assert_eq!(f.predict(&narrow), Err(ModelError::DimensionMismatch { expected: 2, actual: 1 }));
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[2.0, 2.0], 4.0), 0.5);
        assert_eq!(gini(&[3.0, 0.0], 3.0), 0.0);
    }
}
