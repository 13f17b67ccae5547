//! Gradient-boosted regression trees with squared-error loss.
//!
//! Splits are exact greedy over sorted feature values with an L2 penalty on
//! leaf weights. Training is fully deterministic for a given seed.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand::rngs::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of rows each tree sees, sampled without replacement.
    pub subsample: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub min_samples_leaf: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            subsample: 1.0,
            lambda: 1.0,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(w) => return w,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    base_score: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

impl Ensemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    residual: &'a [f64],
    params: &'a Hyperparams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_weight(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        g / (rows.len() as f64 + self.params.lambda)
    }

    fn score(g: f64, h: f64, lambda: f64) -> f64 {
        g * g / (h + lambda)
    }

    /// Best (gain, feature, threshold, rows sorted by that feature, split index).
    fn best_split(&self, rows: &[usize]) -> Option<(f64, usize, f64, Vec<usize>, usize)> {
        let lambda = self.params.lambda;
        let min_leaf = self.params.min_samples_leaf.max(1);
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        let parent = Self::score(total, n as f64, lambda);
        let mut best: Option<(f64, usize, f64, Vec<usize>, usize)> = None;
        let features = self.x.first().map_or(0, Vec::len);
        for f in 0..features {
            let mut sorted = rows.to_vec();
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = 0.0;
            for k in 1..n {
                left += self.residual[sorted[k - 1]];
                let (lo, hi) = (self.x[sorted[k - 1]][f], self.x[sorted[k]][f]);
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let gain = Self::score(left, k as f64, lambda)
                    + Self::score(total - left, (n - k) as f64, lambda)
                    - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0, Vec::new(), k));
                }
            }
            if let Some(b) = best.as_mut().filter(|b| b.1 == f && b.3.is_empty()) {
                b.3 = sorted;
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_weight(rows)));
        if depth >= self.params.max_depth {
            return id;
        }
        if let Some((_, feature, threshold, sorted, k)) = self.best_split(rows) {
            let left = self.grow(&sorted[..k], depth + 1);
            let right = self.grow(&sorted[k..], depth + 1);
            self.nodes[id] = Node::Split { feature, threshold, left, right };
        }
        id
    }
}

/// Fits an ensemble. `x` is row-major; every row must have the same length.
/// Panics if `x` and `y` differ in length or are empty.
pub fn fit(x: &[Vec<f64>], y: &[f64], params: &Hyperparams, seed: u64) -> Ensemble {
    assert_eq!(x.len(), y.len(), "feature and target lengths differ");
    assert!(!y.is_empty(), "no training rows");
    let n = y.len();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut prediction = vec![base_score; n];
    let mut residual = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_size = (libm::round(n as f64 * params.subsample.clamp(0.0, 1.0)) as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n {
            residual[i] = y[i] - prediction[i];
        }
        let rows: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut picked = rand::seq::index::sample(&mut rng, n, sample_size).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut builder = Builder { x, residual: &residual, params, nodes: Vec::new() };
        builder.grow(&rows, 0);
        let tree = RegressionTree { nodes: builder.nodes };
        for i in 0..n {
            prediction[i] += params.learning_rate * tree.predict(&x[i]);
        }
        trees.push(tree);
    }
    Ensemble { base_score, learning_rate: params.learning_rate, trees }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 20) as f64, (i / 20) as f64]).collect();
        let y = x.iter().map(|r| if r[0] < 10.0 { 5.0 } else { 1.0 } + 0.5 * r[1]).collect();
        (x, y)
    }

    #[test]
    fn constant_target_predicts_the_constant() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let model = fit(&x, &[3.25; 50], &Hyperparams::default(), 0);
        assert_eq!(model.predict(&[7.0]), 3.25);
        assert!(model.trees().iter().all(|t| t.leaves() == 1));
    }

    #[test]
    fn learns_a_step_function() {
        let (x, y) = grid();
        let model = fit(&x, &y, &Hyperparams::default(), 0);
        let mse: f64 = x.iter().zip(&y).map(|(r, t)| (model.predict(r) - t).powi(2)).sum::<f64>() / y.len() as f64;
        assert!(mse < 0.01, "mse {mse}");
    }

    #[test]
    fn depth_bounds_leaves() {
        let (x, y) = grid();
        let params = Hyperparams { max_depth: 2, n_trees: 5, ..Hyperparams::default() };
        let model = fit(&x, &y, &params, 0);
        assert!(model.trees().iter().all(|t| t.leaves() <= 4));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let (x, y) = grid();
        let params = Hyperparams { subsample: 0.7, n_trees: 20, ..Hyperparams::default() };
        assert_eq!(fit(&x, &y, &params, 9), fit(&x, &y, &params, 9));
        assert_ne!(fit(&x, &y, &params, 9), fit(&x, &y, &params, 10));
    }
}
