//! Random-forest regression surrogate with per-query mean and variance.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Fraction of features considered at each split.
    pub feature_fraction: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 16,
            max_depth: 8,
            min_samples_split: 3,
            feature_fraction: 5.0 / 6.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { mean: f64, var: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { mean, var } => return (mean, var),
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

fn mean_var(y: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let (mean, var) = mean_var(self.y, &idx);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { mean, var });
        if depth >= self.cfg.max_depth || idx.len() < self.cfg.min_samples_split || var <= 0.0 {
            return at;
        }
        let d = self.x[0].len();
        let k = ((self.cfg.feature_fraction * d as f64).ceil() as usize).clamp(1, d);
        let features = sample(&mut self.rng, d, k).into_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let mut order = idx.clone();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let total: f64 = order.iter().map(|&i| self.y[i]).sum();
            let total_sq: f64 = order.iter().map(|&i| self.y[i] * self.y[i]).sum();
            let (mut s, mut sq) = (0.0, 0.0);
            for split in 1..order.len() {
                let yi = self.y[order[split - 1]];
                s += yi;
                sq += yi * yi;
                let (lo, hi) = (self.x[order[split - 1]][f], self.x[order[split]][f]);
                if lo == hi {
                    continue;
                }
                let (nl, nr) = (split as f64, (order.len() - split) as f64);
                let sse = (sq - s * s / nl) + ((total_sq - sq) - (total - s).powi(2) / nr);
                if best.is_none_or(|(b, _, _)| sse < b) {
                    best = Some((sse, f, 0.5 * (lo + hi)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

/// Bagged regression trees.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    /// Fits on rows `x` (all the same width) and targets `y`. Deterministic in `seed`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: ForestConfig, seed: u64) -> Self {
        assert!(!x.is_empty() && x.len() == y.len(), "forest needs matching, nonempty data");
        let n = x.len();
        let trees = (0..cfg.trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder { x, y, cfg, rng, nodes: Vec::new() };
                b.grow(boot, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Self { trees }
    }

    /// Predictive mean and variance: the spread of tree means plus the mean
    /// within-leaf variance.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let preds: Vec<(f64, f64)> = self.trees.iter().map(|t| t.predict(x)).collect();
        let n = preds.len() as f64;
        let mean = preds.iter().map(|p| p.0).sum::<f64>() / n;
        let between = preds.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / n;
        let within = preds.iter().map(|p| p.1).sum::<f64>() / n;
        (mean, (between + within).max(0.0))
    }
}
