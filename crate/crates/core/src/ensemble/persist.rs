//! Versioned JSON persistence for [`Ensemble`].
//!
//! Layout (field names are part of the format):
//!
//! ```text
//! { "format": "leafprox-ensemble", "version": 1,
//!   "n_trees": T, "n_samples": N, "n_features": p, "seed": s,
//!   "bootstrap": bool, "task": "classification" | "regression",
//!   "classes": [..] | null, "tree_weights": [..],
//!   "trees": [ { "tree_index": t, "root": r, "leaf_count": k,
//!                "nodes": [ { "kind": "internal" | "leaf", "feature", "threshold",
//!                             "left", "right", "local_leaf_id", "value" } ],
//!                "multiplicity": [N ints], "leaves": [N ints] } ] }
//! ```
//!
//! Fields that do not apply to a node kind are written as `null`. Floats are
//! written in shortest round-trip form, so reloading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ensemble, LeafAssignment, Task, Tree, TreeNode};
use crate::bagging::BaggingRecord;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u64 = 1;
const FORMAT_TAG: &str = "leafprox-ensemble";

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u64,
    n_trees: usize,
    n_samples: usize,
    n_features: usize,
    seed: u64,
    bootstrap: bool,
    task: String,
    classes: Option<Vec<f64>>,
    tree_weights: Vec<f64>,
    trees: Vec<TreeDoc>,
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    tree_index: usize,
    root: usize,
    leaf_count: usize,
    nodes: Vec<NodeDoc>,
    multiplicity: Vec<u32>,
    leaves: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    kind: String,
    feature: Option<usize>,
    threshold: Option<f64>,
    left: Option<usize>,
    right: Option<usize>,
    local_leaf_id: Option<u32>,
    value: Option<f64>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u64,
}

fn to_doc(e: &Ensemble) -> ModelDoc {
    let (task, classes) = match e.task() {
        Task::Classification { classes } => ("classification", Some(classes.clone())),
        Task::Regression => ("regression", None),
    };
    let trees = e
        .trees()
        .iter()
        .enumerate()
        .map(|(t, tree)| TreeDoc {
            tree_index: tree.tree_index(),
            root: tree.root(),
            leaf_count: tree.leaf_count(),
            nodes: tree
                .nodes()
                .iter()
                .map(|node| match *node {
                    TreeNode::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    } => NodeDoc {
                        kind: "internal".into(),
                        feature: Some(feature),
                        threshold: Some(threshold),
                        left: Some(left),
                        right: Some(right),
                        local_leaf_id: None,
                        value: None,
                    },
                    TreeNode::Leaf { leaf_id, value } => NodeDoc {
                        kind: "leaf".into(),
                        feature: None,
                        threshold: None,
                        left: None,
                        right: None,
                        local_leaf_id: Some(leaf_id),
                        value: Some(value),
                    },
                })
                .collect(),
            multiplicity: e.bagging().tree_multiplicities(t).to_vec(),
            leaves: e.training_leaves().tree(t).to_vec(),
        })
        .collect();
    ModelDoc {
        format: FORMAT_TAG.into(),
        version: SCHEMA_VERSION,
        n_trees: e.n_trees(),
        n_samples: e.n_train(),
        n_features: e.n_features(),
        seed: e.training_seed(),
        bootstrap: e.bagging().is_bootstrap(),
        task: task.into(),
        classes,
        tree_weights: e.tree_weights().to_vec(),
        trees,
    }
}

fn node_from_doc(t: usize, i: usize, doc: NodeDoc) -> Result<TreeNode> {
    let missing = |field: &str| {
        Error::MalformedModel(format!("tree {t} node {i}: missing `{field}`"))
    };
    match doc.kind.as_str() {
        "internal" => Ok(TreeNode::Internal {
            feature: doc.feature.ok_or_else(|| missing("feature"))?,
            threshold: doc.threshold.ok_or_else(|| missing("threshold"))?,
            left: doc.left.ok_or_else(|| missing("left"))?,
            right: doc.right.ok_or_else(|| missing("right"))?,
        }),
        "leaf" => Ok(TreeNode::Leaf {
            leaf_id: doc.local_leaf_id.ok_or_else(|| missing("local_leaf_id"))?,
            value: doc.value.ok_or_else(|| missing("value"))?,
        }),
        other => Err(Error::MalformedModel(format!(
            "tree {t} node {i}: unknown kind `{other}`"
        ))),
    }
}

fn from_doc(doc: ModelDoc, checked: bool) -> Result<Ensemble> {
    if doc.format != FORMAT_TAG {
        return Err(Error::MalformedModel(format!(
            "unexpected format tag `{}`",
            doc.format
        )));
    }
    if doc.trees.len() != doc.n_trees {
        return Err(Error::MalformedModel(format!(
            "header declares {} trees but {} are present",
            doc.n_trees,
            doc.trees.len()
        )));
    }
    let task = match (doc.task.as_str(), doc.classes) {
        ("classification", Some(classes)) => Task::Classification { classes },
        ("regression", None) => Task::Regression,
        (other, _) => {
            return Err(Error::MalformedModel(format!(
                "task `{other}` with inconsistent classes"
            )))
        }
    };
    let n = doc.n_samples;
    let mut trees = Vec::with_capacity(doc.n_trees);
    let mut multiplicity = Vec::with_capacity(n * doc.n_trees);
    let mut leaf_columns = Vec::with_capacity(doc.n_trees);
    for (t, td) in doc.trees.into_iter().enumerate() {
        if td.multiplicity.len() != n || td.leaves.len() != n {
            return Err(Error::MalformedModel(format!(
                "tree {t}: per-sample arrays must have length {n}"
            )));
        }
        let nodes = td
            .nodes
            .into_iter()
            .enumerate()
            .map(|(i, nd)| node_from_doc(t, i, nd))
            .collect::<Result<Vec<_>>>()?;
        let tree = Tree::new(nodes, td.root, td.tree_index)?;
        if tree.leaf_count() != td.leaf_count {
            return Err(Error::MalformedModel(format!(
                "tree {t}: leaf_count {} does not match {} leaves",
                td.leaf_count,
                tree.leaf_count()
            )));
        }
        trees.push(tree);
        multiplicity.extend(td.multiplicity);
        leaf_columns.push(td.leaves);
    }
    let bagging = BaggingRecord::from_multiplicities(n, doc.n_trees, doc.bootstrap, multiplicity)?;
    let leaves = LeafAssignment::from_columns(n, leaf_columns)?;
    let build = if checked {
        Ensemble::from_parts
    } else {
        Ensemble::from_parts_unchecked
    };
    build(
        trees,
        doc.n_features,
        doc.tree_weights,
        bagging,
        leaves,
        doc.seed,
        task,
    )
}

/// Serialized bytes of `e`. Identical ensembles give identical bytes.
pub fn to_json_bytes(e: &Ensemble) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec(&to_doc(e))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_ensemble(e: &Ensemble, path: &Path) -> Result<()> {
    fs::write(path, to_json_bytes(e)?)?;
    Ok(())
}

fn parse(bytes: &[u8], checked: bool) -> Result<Ensemble> {
    let probe: VersionProbe = serde_json::from_slice(bytes)
        .map_err(|e| Error::MalformedModel(format!("cannot read schema version: {e}")))?;
    if probe.version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: probe.version,
            expected: SCHEMA_VERSION,
        });
    }
    let doc: ModelDoc =
        serde_json::from_slice(bytes).map_err(|e| Error::MalformedModel(e.to_string()))?;
    from_doc(doc, checked)
}

/// Load and fully validate a model file.
pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    parse(&fs::read(path)?, true)
}

/// Load a model without range-checking its stored training leaf ids.
///
/// Tree structure and shapes are still validated. This exists so that a
/// model whose leaf table was corrupted can still be fed to the
/// factorization/oracle comparison and have the damage located.
pub fn load_ensemble_unchecked(path: &Path) -> Result<Ensemble> {
    parse(&fs::read(path)?, false)
}
