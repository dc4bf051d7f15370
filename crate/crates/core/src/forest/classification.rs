use serde::{Deserialize, Serialize};

use super::{grow_tree, sample_counts, GrowSettings, Node, TrainingSet, Tree};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// A single CART tree with 0/1 leaf labels (majority vote, ties to 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTree {
    tree: Tree,
    p: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

/// Nested JSON form of a fitted tree. `feature` is 1-based, matching `X1..Xp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleNode {
    Split { feature: usize, threshold: f64, left: Box<RuleNode>, right: Box<RuleNode> },
    Leaf { label: u8 },
}

pub fn fit_classification_tree(
    data: &TrainingSet,
    max_depth: usize,
    min_leaf: usize,
) -> Result<ClassificationTree> {
    if min_leaf == 0 {
        return Err(Error::InvalidInput("min_leaf must be at least 1".into()));
    }
    if let Some(v) = data.y().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput(format!("classification labels must be 0 or 1, got {v}")));
    }
    let settings = GrowSettings { mtry: data.p(), min_leaf, max_depth: Some(max_depth) };
    // No randomness is consumed when every feature is a candidate.
    let mut rng = rng_from(0, 0);
    let counts = sample_counts(data.n(), false, &mut rng);
    let tree = grow_tree(data, &data.presort(), &counts, &settings, &mut rng);
    Ok(ClassificationTree { tree, p: data.p(), max_depth, min_leaf })
}

fn label_of(mean: f64) -> u8 {
    u8::from(mean > 0.5)
}

impl ClassificationTree {
    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, got: x.len() });
        }
        Ok(label_of(self.tree.predict(x)))
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    pub fn leaf_count(&self) -> usize {
        self.tree.leaf_count()
    }

    pub fn to_rule_node(&self) -> RuleNode {
        fn go(t: &Tree, i: usize) -> RuleNode {
            match t.node(i) {
                Node::Leaf { value } => RuleNode::Leaf { label: label_of(value) },
                Node::Split { feature, threshold, left, right } => RuleNode::Split {
                    feature: feature as usize + 1,
                    threshold,
                    left: Box::new(go(t, left as usize)),
                    right: Box::new(go(t, right as usize)),
                },
            }
        }
        go(&self.tree, self.tree.root())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_rule_node())?)
    }
}

pub const EMPTY_RULE: &str = "∅ (no beneficial subgroup)";
pub const FULL_RULE: &str = "{all units}";

/// Describes the label-1 region as a disjunction of threshold conjunctions,
/// e.g. `{X3 < 0.7094 or (X3 ≥ 0.7094 and X1 ≥ 0.0318)}`. Subtrees whose
/// leaves all agree are collapsed first.
pub fn tree_to_rule_text(tree: &ClassificationTree) -> String {
    rule_text(&tree.to_rule_node())
}

pub fn rule_text(root: &RuleNode) -> String {
    let mut clauses = Vec::new();
    let mut path = Vec::new();
    collect(root, &mut path, &mut clauses);
    if clauses.is_empty() {
        return EMPTY_RULE.to_string();
    }
    if clauses.iter().any(|c| c.is_empty()) {
        return FULL_RULE.to_string();
    }
    let parts: Vec<String> = clauses
        .iter()
        .map(|c| if c.len() == 1 { c[0].clone() } else { format!("({})", c.join(" and ")) })
        .collect();
    format!("{{{}}}", parts.join(" or "))
}

/// `Some(label)` when every leaf below `node` carries the same label.
fn uniform_label(node: &RuleNode) -> Option<u8> {
    match node {
        RuleNode::Leaf { label } => Some(*label),
        RuleNode::Split { left, right, .. } => match (uniform_label(left), uniform_label(right)) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        },
    }
}

#[derive(Clone)]
struct Bound {
    feature: usize,
    upper: bool,
    value: f64,
}

fn collect(node: &RuleNode, path: &mut Vec<Bound>, out: &mut Vec<Vec<String>>) {
    match uniform_label(node) {
        Some(1) => out.push(describe(path)),
        Some(_) => {}
        None => {
            if let RuleNode::Split { feature, threshold, left, right } = node {
                path.push(Bound { feature: *feature, upper: true, value: *threshold });
                collect(left, path, out);
                path.pop();
                path.push(Bound { feature: *feature, upper: false, value: *threshold });
                collect(right, path, out);
                path.pop();
            }
        }
    }
}

/// Keeps only the tightest bound per feature and side, in order of first use.
fn describe(path: &[Bound]) -> Vec<String> {
    let mut kept: Vec<Bound> = Vec::new();
    for b in path {
        match kept.iter_mut().find(|k| k.feature == b.feature && k.upper == b.upper) {
            Some(k) => {
                k.value = if b.upper { k.value.min(b.value) } else { k.value.max(b.value) };
            }
            None => kept.push(b.clone()),
        }
    }
    kept.iter()
        .map(|b| format!("X{} {} {}", b.feature, if b.upper { "<" } else { "≥" }, fmt_threshold(b.value)))
        .collect()
}

fn fmt_threshold(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}
