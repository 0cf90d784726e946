//! Bagged axis-aligned decision trees and leaf routing.

mod persist;
mod train;

pub use persist::{
    load_ensemble, load_ensemble_unchecked, save_ensemble, to_json_bytes, SCHEMA_VERSION,
};
pub use train::{train_forest, SplitCriterion, TrainConfig};

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::bagging::BaggingRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Samples with `x[feature] <= threshold` go to `left`.
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// `value` is the majority class label (classification) or the mean
    /// target (regression) of the in-bag samples that reached the leaf.
    Leaf { leaf_id: u32, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    root: usize,
    leaf_count: usize,
    tree_index: usize,
    leaf_nodes: Vec<usize>,
}

impl Tree {
    /// Assemble a tree and check that it is a rooted binary tree whose leaf
    /// ids are exactly `0..leaf_count`.
    pub fn new(nodes: Vec<TreeNode>, root: usize, tree_index: usize) -> Result<Self> {
        let bad = |msg: String| Error::MalformedModel(format!("tree {tree_index}: {msg}"));
        if root >= nodes.len() {
            return Err(bad(format!("root {root} out of range")));
        }
        let mut visited = vec![false; nodes.len()];
        let mut stack = vec![root];
        let mut leaf_ids = Vec::new();
        while let Some(id) = stack.pop() {
            if visited[id] {
                return Err(bad(format!("node {id} reached twice")));
            }
            visited[id] = true;
            match nodes[id] {
                TreeNode::Internal {
                    left,
                    right,
                    threshold,
                    ..
                } => {
                    if left >= nodes.len() || right >= nodes.len() {
                        return Err(bad(format!("node {id} has a child out of range")));
                    }
                    if !threshold.is_finite() {
                        return Err(bad(format!("node {id} has a non-finite threshold")));
                    }
                    stack.push(right);
                    stack.push(left);
                }
                TreeNode::Leaf { leaf_id, .. } => leaf_ids.push((leaf_id as usize, id)),
            }
        }
        if let Some(orphan) = visited.iter().position(|v| !v) {
            return Err(bad(format!("node {orphan} is unreachable")));
        }
        let leaf_count = leaf_ids.len();
        let mut leaf_nodes = vec![usize::MAX; leaf_count];
        for (leaf_id, node) in leaf_ids {
            if leaf_id >= leaf_count || leaf_nodes[leaf_id] != usize::MAX {
                return Err(bad(format!(
                    "leaf ids are not a permutation of 0..{leaf_count}"
                )));
            }
            leaf_nodes[leaf_id] = node;
        }
        Ok(Self {
            nodes,
            root,
            leaf_count,
            tree_index,
            leaf_nodes,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn tree_index(&self) -> usize {
        self.tree_index
    }

    /// Index into [`Tree::nodes`] of the leaf reached by `sample`.
    pub fn leaf_node(&self, sample: &[f64]) -> usize {
        let mut id = self.root;
        loop {
            match self.nodes[id] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if sample[feature] <= threshold {
                        left
                    } else {
                        right
                    };
                }
                TreeNode::Leaf { .. } => return id,
            }
        }
    }

    /// Local leaf id reached by `sample`.
    pub fn leaf_of(&self, sample: &[f64]) -> u32 {
        match self.nodes[self.leaf_node(sample)] {
            TreeNode::Leaf { leaf_id, .. } => leaf_id,
            TreeNode::Internal { .. } => unreachable!("routing ends at a leaf"),
        }
    }

    /// Prediction stored at local leaf `leaf_id`.
    pub fn leaf_value(&self, leaf_id: u32) -> f64 {
        match self.nodes[self.leaf_nodes[leaf_id as usize]] {
            TreeNode::Leaf { value, .. } => value,
            TreeNode::Internal { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((id, d)) = stack.pop() {
            best = best.max(d);
            if let TreeNode::Internal { left, right, .. } = self.nodes[id] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        best
    }
}

/// `n_samples × n_trees` table of local leaf ids.
///
/// Stored tree-major so that one tree's column is contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafAssignment {
    n_samples: usize,
    n_trees: usize,
    leaves: Vec<u32>,
}

impl LeafAssignment {
    /// Build from per-tree columns, each of length `n_samples`.
    pub fn from_columns(n_samples: usize, columns: Vec<Vec<u32>>) -> Result<Self> {
        let n_trees = columns.len();
        let mut leaves = Vec::with_capacity(n_samples * n_trees);
        for col in columns {
            if col.len() != n_samples {
                return Err(Error::ShapeMismatch {
                    what: "leaf assignment column",
                    expected: n_samples,
                    found: col.len(),
                });
            }
            leaves.extend(col);
        }
        Ok(Self {
            n_samples,
            n_trees,
            leaves,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_trees(&self) -> usize {
        self.n_trees
    }

    /// Leaf of sample `i` in tree `t`.
    #[inline]
    pub fn get(&self, i: usize, t: usize) -> u32 {
        self.leaves[t * self.n_samples + i]
    }

    /// Leaves of every sample in tree `t`.
    pub fn tree(&self, t: usize) -> &[u32] {
        &self.leaves[t * self.n_samples..(t + 1) * self.n_samples]
    }

    /// Leaves of sample `i` across trees.
    pub fn sample(&self, i: usize) -> impl Iterator<Item = u32> + '_ {
        (0..self.n_trees).map(move |t| self.get(i, t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    /// Sorted distinct label values; class `c` is `classes[c]`.
    Classification { classes: Vec<f64> },
    Regression,
}

/// A trained ensemble plus everything the proximity schemes read from it.
///
/// Besides the trees this keeps the bootstrap multiplicities and the leaf
/// of every training sample, so training-set proximities can be computed
/// from a persisted model without the training matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trees: Vec<Tree>,
    n_train: usize,
    n_features: usize,
    tree_weights: Vec<f64>,
    bagging: BaggingRecord,
    training_leaves: LeafAssignment,
    training_seed: u64,
    task: Task,
}

impl Ensemble {
    /// Assemble and validate.
    pub fn from_parts(
        trees: Vec<Tree>,
        n_features: usize,
        tree_weights: Vec<f64>,
        bagging: BaggingRecord,
        training_leaves: LeafAssignment,
        training_seed: u64,
        task: Task,
    ) -> Result<Self> {
        let e = Self::from_parts_unchecked(
            trees,
            n_features,
            tree_weights,
            bagging,
            training_leaves,
            training_seed,
            task,
        )?;
        e.validate_training_leaves()?;
        Ok(e)
    }

    /// Like [`Ensemble::from_parts`] but does not range-check the stored
    /// training leaf ids. Used to load models for diagnosis.
    pub(crate) fn from_parts_unchecked(
        trees: Vec<Tree>,
        n_features: usize,
        tree_weights: Vec<f64>,
        bagging: BaggingRecord,
        training_leaves: LeafAssignment,
        training_seed: u64,
        task: Task,
    ) -> Result<Self> {
        let n_trees = trees.len();
        if n_trees == 0 {
            return Err(Error::EmptyInput("ensemble has no trees"));
        }
        if n_features == 0 {
            return Err(Error::EmptyInput("ensemble has no features"));
        }
        for (t, tree) in trees.iter().enumerate() {
            if tree.tree_index != t {
                return Err(Error::MalformedModel(format!(
                    "tree at position {t} has index {}",
                    tree.tree_index
                )));
            }
            for node in &tree.nodes {
                if let TreeNode::Internal { feature, .. } = node {
                    if *feature >= n_features {
                        return Err(Error::MalformedModel(format!(
                            "tree {t} splits on feature {feature} of {n_features}"
                        )));
                    }
                }
            }
        }
        check_tree_weights(&tree_weights, n_trees)?;
        let n_train = bagging.n_samples();
        if bagging.n_trees() != n_trees {
            return Err(Error::ShapeMismatch {
                what: "bagging record trees",
                expected: n_trees,
                found: bagging.n_trees(),
            });
        }
        if training_leaves.n_trees() != n_trees || training_leaves.n_samples() != n_train {
            return Err(Error::ShapeMismatch {
                what: "training leaf assignment",
                expected: n_train * n_trees,
                found: training_leaves.n_samples() * training_leaves.n_trees(),
            });
        }
        Ok(Self {
            trees,
            n_train,
            n_features,
            tree_weights,
            bagging,
            training_leaves,
            training_seed,
            task,
        })
    }

    fn validate_training_leaves(&self) -> Result<()> {
        for (t, tree) in self.trees.iter().enumerate() {
            if let Some(&leaf) = self
                .training_leaves
                .tree(t)
                .iter()
                .find(|&&l| l as usize >= tree.leaf_count)
            {
                return Err(Error::MalformedModel(format!(
                    "tree {t}: training leaf id {leaf} >= leaf count {}",
                    tree.leaf_count
                )));
            }
        }
        Ok(())
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn tree_weights(&self) -> &[f64] {
        &self.tree_weights
    }

    /// Replace the per-tree importances used by the GBT scheme.
    pub fn set_tree_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        check_tree_weights(&weights, self.trees.len())?;
        self.tree_weights = weights;
        Ok(())
    }

    pub fn bagging(&self) -> &BaggingRecord {
        &self.bagging
    }

    /// Leaf of every training sample in every tree, recorded at fit time.
    pub fn training_leaves(&self) -> &LeafAssignment {
        &self.training_leaves
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    /// Total number of leaves across trees.
    pub fn total_leaves(&self) -> usize {
        self.trees.iter().map(Tree::leaf_count).sum()
    }

    /// Out-of-bag error on the training targets: misclassification rate for
    /// classification, mean squared error for regression. Samples that are
    /// never out of bag are skipped; `None` when no sample is.
    pub fn oob_error(&self, y: &[f64]) -> Option<f64> {
        if y.len() != self.n_train {
            return None;
        }
        let mut scored = 0usize;
        let mut loss = 0.0;
        for (i, &target) in y.iter().enumerate() {
            let oob_trees: Vec<usize> = (0..self.n_trees())
                .filter(|&t| self.bagging.is_oob(i, t))
                .collect();
            if oob_trees.is_empty() {
                continue;
            }
            let preds = oob_trees.iter().map(|&t| {
                self.trees[t].leaf_value(self.training_leaves.get(i, t))
            });
            match &self.task {
                Task::Classification { classes } => {
                    let mut votes = vec![0usize; classes.len()];
                    for p in preds {
                        if let Ok(c) = classes.binary_search_by(|v| v.total_cmp(&p)) {
                            votes[c] += 1;
                        }
                    }
                    let best = (0..votes.len())
                        .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a)))
                        .unwrap_or(0);
                    if classes[best] != target {
                        loss += 1.0;
                    }
                }
                Task::Regression => {
                    let mean = preds.sum::<f64>() / oob_trees.len() as f64;
                    loss += (mean - target).powi(2);
                }
            }
            scored += 1;
        }
        (scored > 0).then(|| loss / scored as f64)
    }
}

fn check_tree_weights(weights: &[f64], n_trees: usize) -> Result<()> {
    if weights.len() != n_trees {
        return Err(Error::ShapeMismatch {
            what: "tree weights",
            expected: n_trees,
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Config(
            "tree weights must be finite and non-negative".into(),
        ));
    }
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::Config(
            "at least one tree weight must be positive".into(),
        ));
    }
    Ok(())
}

/// Check that `x` has `p` columns of finite values.
pub(crate) fn check_matrix(x: &ArrayView2<f64>, p: Option<usize>) -> Result<()> {
    if let Some(p) = p {
        if x.ncols() != p {
            return Err(Error::ShapeMismatch {
                what: "feature columns",
                expected: p,
                found: x.ncols(),
            });
        }
    }
    for (row, r) in x.outer_iter().enumerate() {
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Route every row of `x` through every tree.
pub fn apply(ensemble: &Ensemble, x: ArrayView2<f64>) -> Result<LeafAssignment> {
    check_matrix(&x, Some(ensemble.n_features))?;
    let x = x.as_standard_layout();
    let data = x.as_slice().expect("standard layout");
    LeafAssignment::from_columns(x.nrows(), route_rows(&ensemble.trees, data, ensemble.n_features))
}

/// Leaf of every row of the row-major `data` (width `p`) in every tree.
pub(crate) fn route_rows(trees: &[Tree], data: &[f64], p: usize) -> Vec<Vec<u32>> {
    trees
        .par_iter()
        .map(|tree| data.chunks_exact(p).map(|row| tree.leaf_of(row)).collect())
        .collect()
}
