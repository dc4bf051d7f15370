use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{grow_tree, sample_counts, ForestParams, GrowSettings, TrainingSet, Tree};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Bagged regression trees; each leaf stores the mean of its in-bag responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    trees: Vec<Tree>,
    p: usize,
    n: usize,
    y_range: (f64, f64),
    /// Per tree, whether each training row was drawn into its sample.
    #[serde(skip)]
    in_bag: Vec<Vec<bool>>,
}

/// Trees are grown in parallel; tree `t` draws from a stream derived from
/// `(params.seed, t)` only, so the fit does not depend on thread count.
pub fn fit_forest(data: &TrainingSet, params: &ForestParams) -> Result<RegressionForest> {
    params.validate()?;
    let p = data.p();
    let settings = GrowSettings {
        mtry: params.resolved_mtry(p)?,
        min_leaf: params.min_leaf,
        max_depth: params.max_depth,
    };
    let presorted = data.presort();
    let (trees, in_bag): (Vec<Tree>, Vec<Vec<bool>>) = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(params.seed, t as u64);
            let counts = sample_counts(data.n(), params.bootstrap, &mut rng);
            let tree = grow_tree(data, &presorted, &counts, &settings, &mut rng);
            (tree, counts.iter().map(|&c| c > 0).collect())
        })
        .unzip();
    let (lo, hi) = data
        .y()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(RegressionForest { trees, p, n: data.n(), y_range: (lo, hi), in_bag })
}

pub fn predict_forest(forest: &RegressionForest, x: &[f64]) -> Result<f64> {
    forest.predict(x)
}

impl RegressionForest {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, got: x.len() });
        }
        Ok(self.predict_unchecked(x))
    }

    /// Averages the per-tree leaf means; `x` must have length `p`.
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        total / self.trees.len() as f64
    }

    /// Predictions for many rows, tree by tree; each row's sum runs over
    /// the trees in the same order as [`Self::predict`].
    pub(crate) fn predict_rows(&self, xs: &[&[f64]]) -> Vec<f64> {
        let mut out = vec![0.0; xs.len()];
        for tree in &self.trees {
            for (o, x) in out.iter_mut().zip(xs) {
                *o += tree.predict(x);
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Out-of-bag predictions for the training rows, given in training
    /// order: row `i` averages only the trees whose sample missed it. Rows
    /// drawn by every tree (always the case without bootstrap) fall back to
    /// the full average.
    pub fn predict_oob(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        if rows.len() != self.n {
            return Err(Error::InvalidInput(format!("expected the {} training rows, got {}", self.n, rows.len())));
        }
        if self.in_bag.len() != self.trees.len() {
            return Err(Error::InvalidInput("forest carries no in-bag record".into()));
        }
        if let Some(x) = rows.iter().find(|x| x.len() != self.p) {
            return Err(Error::DimensionMismatch { expected: self.p, got: x.len() });
        }
        let mut sum = vec![0.0; self.n];
        let mut count = vec![0u32; self.n];
        for (tree, in_bag) in self.trees.iter().zip(&self.in_bag) {
            for (i, x) in rows.iter().enumerate() {
                if !in_bag[i] {
                    sum[i] += tree.predict(x);
                    count[i] += 1;
                }
            }
        }
        Ok(rows
            .iter()
            .enumerate()
            .map(|(i, x)| if count[i] > 0 { sum[i] / f64::from(count[i]) } else { self.predict_unchecked(x) })
            .collect())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_train(&self) -> usize {
        self.n
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Smallest and largest training response.
    pub fn y_range(&self) -> (f64, f64) {
        self.y_range
    }
}
