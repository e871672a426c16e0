//! Extremely randomized trees regressor.
//!
//! Each tree sees the full training sample. At every node a random subset
//! of features is drawn, one uniform threshold per feature inside the
//! node-local feature range, and the candidate with the largest variance
//! reduction becomes the split. Across-tree spread of the predictions is
//! the uncertainty estimate used by the acquisition function.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_split: usize,
    /// Fraction of features drawn at each node, in (0, 1].
    pub max_features: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, min_samples_split: 2, max_features: 1.0, seed: 0 }
    }
}

impl ForestConfig {
    fn check(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Forest("n_trees must be >= 1".into()));
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return Err(Error::Forest(format!("max_features {} not in (0, 1]", self.max_features)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { mean: f64, count: usize },
}

/// Flat tree; node 0 is the root. Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { mean, .. } => return mean,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
}

struct Builder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    n_candidates: usize,
    rng: R,
    nodes: Vec<Node>,
}

fn sse(sum: f64, sum_sq: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (sum_sq - sum * sum / n as f64).max(0.0)
    }
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| {
            (a.min(self.y[r]), b.max(self.y[r]))
        });
        // rounding in the division must not leave the target range
        let mean = (rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64).clamp(lo, hi);
        self.nodes.push(Node::Leaf { mean, count: rows.len() });
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: &mut [usize]) -> usize {
        let n = rows.len();
        let first = self.y[rows[0]];
        if n < self.cfg.min_samples_split || rows.iter().all(|&r| self.y[r] == first) {
            return self.leaf(rows);
        }
        let d = self.x[0].len();
        let mut features = sample(&mut self.rng, d, self.n_candidates).into_vec();
        features.sort_unstable();

        let (tot, tot_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| (s + self.y[r], q + self.y[r] * self.y[r]));
        let parent = sse(tot, tot_sq, n);
        // (score, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        for f in features {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| {
                (a.min(self.x[r][f]), b.max(self.x[r][f]))
            });
            if !(lo < hi) {
                continue;
            }
            let threshold = self.rng.random_range(lo..hi);
            let (mut s, mut q, mut c) = (0.0, 0.0, 0usize);
            for &r in rows.iter() {
                if self.x[r][f] <= threshold {
                    s += self.y[r];
                    q += self.y[r] * self.y[r];
                    c += 1;
                }
            }
            if c == 0 || c == n {
                continue;
            }
            let score = parent - sse(s, q, c) - sse(tot - s, tot_sq - q, n - c);
            let better = match best {
                None => true,
                Some((bs, bf, bt)) => score > bs || (score == bs && (f < bf || (f == bf && threshold < bt))),
            };
            if better {
                best = Some((score, f, threshold));
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(rows);
        };

        let mut split = 0;
        for i in 0..n {
            if self.x[rows[i]][feature] <= threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { mean: 0.0, count: 0 });
        let (l, r) = rows.split_at_mut(split);
        let left = self.build(l);
        let right = self.build(r);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

impl Forest {
    /// Fit on rows of `x` (n × d) against targets `y`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<Forest> {
        cfg.check()?;
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Forest(format!("need n >= 1 rows with matching targets (x: {}, y: {})", x.len(), y.len())));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|r| r.len() != d) {
            return Err(Error::Forest("ragged or empty feature rows".into()));
        }
        if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Forest("non-finite input".into()));
        }
        let n_candidates = ((cfg.max_features * d as f64).ceil() as usize).clamp(1, d);
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut b = Builder {
                    x,
                    y,
                    cfg,
                    n_candidates,
                    rng: seed::rng(seed::derive_tagged(cfg.seed, "tree", t as u64)),
                    nodes: Vec::new(),
                };
                let mut rows: Vec<usize> = (0..x.len()).collect();
                b.build(&mut rows);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Forest { trees, n_features: d })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Per-tree predictions at `x`.
    pub fn predict_trees(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::Forest(format!("expected {} features, got {}", self.n_features, x.len())));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    /// Mean and population standard deviation across trees.
    pub fn predict_mean_std(&self, x: &[f64]) -> Result<(f64, f64)> {
        let p = self.predict_trees(x)?;
        let n = p.len() as f64;
        let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mu = (p.iter().sum::<f64>() / n).clamp(lo, hi);
        let var = p.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        Ok((mu, var.max(0.0).sqrt()))
    }
}
