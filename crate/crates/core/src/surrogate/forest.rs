//! Multi-output regression forest: bootstrap-sampled CART trees split on the
//! summed squared error across all outputs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    /// Fraction of input features tried at each split, in `(0, 1]`.
    pub max_features: f64,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            max_features: 1.0 / 3.0,
            min_samples_leaf: 1,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees", "must be ≥ 1"));
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return Err(Error::invalid("max_features", "must lie in (0, 1]"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf", "must be ≥ 1"));
        }
        Ok(())
    }
}

/// One tree as parallel node arrays. Leaves have `feature == -1` and own
/// `outputs` values starting at `value_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value_offset: Vec<u32>,
    pub values: Vec<f64>,
}

impl Tree {
    fn leaf_values(&self, x: &[f64], outputs: usize) -> &[f64] {
        let mut n = 0usize;
        while self.feature[n] >= 0 {
            n = if x[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
        }
        let off = self.value_offset[n] as usize;
        &self.values[off..off + outputs]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub inputs: usize,
    pub outputs: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.leaf_values(x, self.outputs)) {
                *o += v;
            }
        }
        let k = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::invalid("regressor.trees", "empty forest"));
        }
        for (ti, t) in self.trees.iter().enumerate() {
            let n = t.feature.len();
            if [
                t.threshold.len(),
                t.left.len(),
                t.right.len(),
                t.value_offset.len(),
            ]
            .iter()
            .any(|&l| l != n)
                || n == 0
            {
                return Err(Error::invalid(
                    format!("regressor.trees[{ti}]"),
                    "ragged node arrays",
                ));
            }
            for i in 0..n {
                if t.feature[i] >= 0 {
                    let ok = (t.feature[i] as usize) < self.inputs
                        && (t.left[i] as usize) < n
                        && (t.right[i] as usize) < n
                        && t.left[i] as usize > i
                        && t.right[i] as usize > i;
                    if !ok {
                        return Err(Error::invalid(
                            format!("regressor.trees[{ti}]"),
                            format!("bad split node {i}"),
                        ));
                    }
                } else if t.value_offset[i] as usize + self.outputs > t.values.len() {
                    return Err(Error::invalid(
                        format!("regressor.trees[{ti}]"),
                        format!("leaf {i} values out of range"),
                    ));
                }
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Vec<f64>],
    params: ForestParams,
    mtry: usize,
    outputs: usize,
    tree: Tree,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn push_leaf(&mut self, idx: &[usize]) -> u32 {
        let id = self.tree.feature.len() as u32;
        let off = self.tree.values.len() as u32;
        let mut mean = vec![0.0; self.outputs];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(&self.y[i]) {
                *m += v;
            }
        }
        let n = idx.len() as f64;
        self.tree.values.extend(mean.iter().map(|m| m / n));
        self.tree.feature.push(-1);
        self.tree.threshold.push(0.0);
        self.tree.left.push(0);
        self.tree.right.push(0);
        self.tree.value_offset.push(off);
        id
    }

    /// Best (feature, threshold, score) where score is ‖ΣL‖²/nL + ‖ΣR‖²/nR.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let m = idx.len();
        let leaf = self.params.min_samples_leaf;
        if m < 2 * leaf {
            return None;
        }
        let mut total = vec![0.0; self.outputs];
        for &i in idx {
            for (t, v) in total.iter_mut().zip(&self.y[i]) {
                *t += v;
            }
        }
        let parent = total.iter().map(|v| v * v).sum::<f64>() / m as f64;
        let features = sample(&mut self.rng, self.x[0].len(), self.mtry);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        let mut left = vec![0.0; self.outputs];
        for f in features.iter() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            if self.x[order[0]][f] == self.x[order[m - 1]][f] {
                continue;
            }
            left.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..m - 1 {
                for (l, v) in left.iter_mut().zip(&self.y[order[k]]) {
                    *l += v;
                }
                let nl = k + 1;
                let (lo, hi) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if nl < leaf || m - nl < leaf || lo == hi {
                    continue;
                }
                let mut sl = 0.0;
                let mut sr = 0.0;
                for (l, t) in left.iter().zip(&total) {
                    sl += l * l;
                    let r = t - l;
                    sr += r * r;
                }
                let score = sl / nl as f64 + sr / (m - nl) as f64;
                if best.is_none_or(|b| score > b.2) {
                    let mid = 0.5 * (lo + hi);
                    best = Some((f, if mid < hi { mid } else { lo }, score));
                }
            }
        }
        // a split must strictly reduce the squared error
        best.filter(|b| b.2 > parent * (1.0 + 1e-12) + 1e-15)
            .map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> u32 {
        let at_depth = self.params.max_depth.is_some_and(|d| depth >= d);
        let split = if at_depth {
            None
        } else {
            self.best_split(&idx)
        };
        let Some((f, thr)) = split else {
            return self.push_leaf(&idx);
        };
        let id = self.tree.feature.len();
        self.tree.feature.push(f as i32);
        self.tree.threshold.push(thr);
        self.tree.left.push(0);
        self.tree.right.push(0);
        self.tree.value_offset.push(0);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][f] <= thr);
        let li = self.grow(l, depth + 1);
        let ri = self.grow(r, depth + 1);
        self.tree.left[id] = li;
        self.tree.right[id] = ri;
        id as u32
    }
}

pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    params.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid(
            "training_set",
            "need matching, non-empty X and Y",
        ));
    }
    let inputs = x[0].len();
    let outputs = y[0].len();
    let mtry = ((inputs as f64 * params.max_features).ceil() as usize).clamp(1, inputs);
    let n = x.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder {
                x,
                y,
                params: *params,
                mtry,
                outputs,
                tree: Tree {
                    feature: Vec::new(),
                    threshold: Vec::new(),
                    left: Vec::new(),
                    right: Vec::new(),
                    value_offset: Vec::new(),
                    values: Vec::new(),
                },
                rng,
            };
            b.grow(boot, 0);
            b.tree
        })
        .collect();
    let forest = Forest {
        inputs,
        outputs,
        trees,
    };
    forest.validate()?;
    Ok(forest)
}
