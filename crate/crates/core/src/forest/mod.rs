//! Axis-aligned CART trees grown from scratch.
//!
//! A single builder serves both the regression forest (nuisance means) and
//! the classification tree that summarises the beneficial subgroup: for
//! 0/1 labels, minimising weighted Gini impurity selects the same split as
//! maximising variance reduction, so both maximise `S_L²/W_L + S_R²/W_R`.
//!
//! Split search is exact. Every feature order is sorted once per fit; nodes
//! own a contiguous range of each sorted order and children are produced by
//! stable partitioning, so each candidate threshold (the midpoint between
//! consecutive distinct values) is scanned in O(n) per node and feature.

mod classification;
mod regression;

pub use classification::{fit_classification_tree, tree_to_rule_text, ClassificationTree, RuleNode};
pub use regression::{fit_forest, predict_forest, RegressionForest};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per node; `None` means `ceil(p/3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    /// `None` grows until the leaf-size or purity limits stop it.
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, mtry: None, min_leaf: 5, max_depth: None, bootstrap: true, seed: 0 }
    }
}

impl ForestParams {
    /// Smaller forests used by the simulation and acceptance suites.
    pub fn ci() -> Self {
        Self { n_trees: 50, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidInput("min_leaf must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::InvalidInput("mtry must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_mtry(&self, p: usize) -> Result<usize> {
        match self.mtry {
            None => Ok(p.div_ceil(3).max(1)),
            Some(m) if m >= 1 && m <= p => Ok(m),
            Some(m) => Err(Error::InvalidInput(format!("mtry {m} outside [1, {p}]"))),
        }
    }
}

/// Column-major training data.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl TrainingSet {
    pub fn from_rows<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut y = Vec::new();
        for (x, target) in rows {
            if y.is_empty() {
                if x.is_empty() {
                    return Err(Error::InvalidInput("rows need at least one covariate".into()));
                }
                columns = vec![Vec::new(); x.len()];
            } else if x.len() != columns.len() {
                return Err(Error::DimensionMismatch { expected: columns.len(), got: x.len() });
            }
            for (col, v) in columns.iter_mut().zip(x) {
                col.push(*v);
            }
            y.push(target);
        }
        if y.is_empty() {
            return Err(Error::EmptyData("training set has no rows"));
        }
        Ok(Self { columns, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Row order of every feature, ties broken by row index.
    fn presort(&self) -> Vec<Vec<u32>> {
        self.columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..self.n() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Node {
    Leaf { value: f64 },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

const LEAF: u32 = u32::MAX;

/// Packed node: a leaf has `feature == LEAF` and keeps its value in `value`;
/// a split keeps its threshold there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Packed {
    feature: u32,
    children: [u32; 2],
    value: f64,
}

/// A fitted binary tree; rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Packed>,
}

impl Tree {
    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        let mut n = &self.nodes[0];
        while n.feature != LEAF {
            let right = x[n.feature as usize] >= n.value;
            n = &self.nodes[n.children[usize::from(right)] as usize];
        }
        n.value
    }

    pub(crate) fn root(&self) -> usize {
        0
    }

    pub(crate) fn node(&self, i: usize) -> Node {
        let n = self.nodes[i];
        if n.feature == LEAF {
            Node::Leaf { value: n.value }
        } else {
            Node::Split { feature: n.feature, threshold: n.value, left: n.children[0], right: n.children[1] }
        }
    }

    /// Depth of the deepest leaf (a lone leaf has depth 0).
    pub(crate) fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.node(i) {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left as usize).max(go(t, right as usize)),
            }
        }
        go(self, 0)
    }

    pub(crate) fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }
}

pub(crate) struct GrowSettings {
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    data: &'a TrainingSet,
    weight: Vec<f64>,
    /// Per feature: in-bag rows sorted by that feature, partitioned by node.
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    features: Vec<usize>,
    settings: &'a GrowSettings,
    rng: &'a mut Rng,
    nodes: Vec<Packed>,
}

/// Grows one tree. `counts[i]` is the multiplicity of row `i` in the
/// (bootstrap) sample; rows with zero count are out of bag.
pub(crate) fn grow_tree(
    data: &TrainingSet,
    presorted: &[Vec<u32>],
    counts: &[u32],
    settings: &GrowSettings,
    rng: &mut Rng,
) -> Tree {
    let order: Vec<Vec<u32>> = presorted
        .iter()
        .map(|o| o.iter().copied().filter(|&r| counts[r as usize] > 0).collect())
        .collect();
    let in_bag = order[0].len();
    let mut b = Builder {
        data,
        weight: counts.iter().map(|&c| c as f64).collect(),
        order,
        goes_left: vec![false; data.n()],
        scratch: Vec::with_capacity(in_bag),
        features: (0..data.p()).collect(),
        settings,
        rng,
        nodes: Vec::new(),
    };
    b.grow(0, in_bag, 0);
    Tree { nodes: b.nodes }
}

impl Builder<'_> {
    fn grow(&mut self, start: usize, end: usize, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let rows = &self.order[0][start..end];
        let y = self.data.y();
        let (mut w, mut s, mut ss) = (0.0, 0.0, 0.0);
        for &r in rows {
            let (wr, yr) = (self.weight[r as usize], y[r as usize]);
            w += wr;
            s += wr * yr;
            ss += wr * yr * yr;
        }
        let mean = s / w;
        self.nodes.push(Packed { feature: LEAF, children: [0, 0], value: mean });

        let first = y[rows[0] as usize];
        let pure = rows.iter().all(|&r| y[r as usize] == first);
        let depth_capped = self.settings.max_depth.is_some_and(|d| depth >= d);
        let min_leaf = self.settings.min_leaf as f64;
        if pure || depth_capped || w < 2.0 * min_leaf {
            return id;
        }

        let parent_score = s * s / w;
        let sse = (ss - parent_score).max(0.0);
        let Some(best) = self.best_split(start, end, w, s) else {
            return id;
        };
        if best.score - parent_score <= 1e-12 * sse {
            return id;
        }

        let split_col = &self.data.columns[best.feature];
        let mut n_left = 0;
        for &r in &self.order[best.feature][start..end] {
            let left = split_col[r as usize] < best.threshold;
            self.goes_left[r as usize] = left;
            n_left += left as usize;
        }
        for f in 0..self.order.len() {
            self.scratch.clear();
            let seg = &mut self.order[f][start..end];
            let mut li = 0;
            for i in 0..seg.len() {
                let r = seg[i];
                if self.goes_left[r as usize] {
                    seg[li] = r;
                    li += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            seg[li..].copy_from_slice(&self.scratch);
        }

        let mid = start + n_left;
        let left = self.grow(start, mid, depth + 1);
        let right = self.grow(mid, end, depth + 1);
        self.nodes[id as usize] =
            Packed { feature: best.feature as u32, children: [left, right], value: best.threshold };
        id
    }

    /// Visits features in random order; stops after `mtry` features once
    /// at least one admissible split exists. Ties go to the lowest feature
    /// index, then the lowest threshold.
    fn best_split(&mut self, start: usize, end: usize, w: f64, s: f64) -> Option<Candidate> {
        let p = self.features.len();
        if self.settings.mtry < p {
            self.features.shuffle(self.rng);
        } else {
            self.features.sort_unstable();
        }
        let mut best: Option<Candidate> = None;
        for visited in 0..p {
            if visited >= self.settings.mtry && best.is_some() {
                break;
            }
            let f = self.features[visited];
            if let Some(c) = self.scan_feature(f, start, end, w, s) {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        c.score > b.score
                            || (c.score == b.score
                                && (c.feature < b.feature
                                    || (c.feature == b.feature && c.threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn scan_feature(&self, f: usize, start: usize, end: usize, w: f64, s: f64) -> Option<Candidate> {
        let col = &self.data.columns[f];
        let y = self.data.y();
        let seg = &self.order[f][start..end];
        let min_leaf = self.settings.min_leaf as f64;
        let (mut wl, mut sl) = (0.0, 0.0);
        let mut best: Option<Candidate> = None;
        for i in 0..seg.len() - 1 {
            let r = seg[i] as usize;
            wl += self.weight[r];
            sl += self.weight[r] * y[r];
            let (xv, xn) = (col[r], col[seg[i + 1] as usize]);
            if xn <= xv {
                continue;
            }
            let wr = w - wl;
            if wl < min_leaf || wr < min_leaf {
                continue;
            }
            let sr = s - sl;
            let score = sl * sl / wl + sr * sr / wr;
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mut threshold = 0.5 * (xv + xn);
                if threshold <= xv {
                    threshold = xn;
                }
                best = Some(Candidate { feature: f, threshold, score });
            }
        }
        best
    }
}

/// Row multiplicities for one tree.
pub(crate) fn sample_counts(n: usize, bootstrap: bool, rng: &mut Rng) -> Vec<u32> {
    if !bootstrap {
        return vec![1; n];
    }
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}
