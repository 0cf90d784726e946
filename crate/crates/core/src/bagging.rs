//! Bootstrap multiplicities, out-of-bag sets and in-bag leaf masses.

use crate::ensemble::{Ensemble, LeafAssignment};
use crate::error::{Error, Result};

/// Per-tree bootstrap multiplicities `c_j(t)` for every training sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaggingRecord {
    n_samples: usize,
    n_trees: usize,
    bootstrap: bool,
    // tree-major: multiplicity[t * n_samples + j]
    multiplicity: Vec<u32>,
    oob_counts: Vec<u32>,
}

/// Count bootstrap draws. `draws[t]` is the index multiset drawn for tree `t`.
pub fn record_bagging(n_samples: usize, draws: &[Vec<usize>]) -> Result<BaggingRecord> {
    let mut multiplicity = vec![0u32; n_samples * draws.len()];
    for (t, draw) in draws.iter().enumerate() {
        let column = &mut multiplicity[t * n_samples..(t + 1) * n_samples];
        for &j in draw {
            if j >= n_samples {
                return Err(Error::IndexOutOfRange {
                    what: "bootstrap draw",
                    index: j,
                    bound: n_samples,
                });
            }
            column[j] += 1;
        }
    }
    Ok(BaggingRecord::build(n_samples, draws.len(), true, multiplicity))
}

impl BaggingRecord {
    /// Record for trees fit on the full data: every multiplicity is one and
    /// no sample is ever out of bag.
    pub fn without_resampling(n_samples: usize, n_trees: usize) -> Self {
        Self::build(n_samples, n_trees, false, vec![1; n_samples * n_trees])
    }

    /// Rebuild from a stored tree-major multiplicity table.
    pub fn from_multiplicities(
        n_samples: usize,
        n_trees: usize,
        bootstrap: bool,
        multiplicity: Vec<u32>,
    ) -> Result<Self> {
        if multiplicity.len() != n_samples * n_trees {
            return Err(Error::ShapeMismatch {
                what: "multiplicity table",
                expected: n_samples * n_trees,
                found: multiplicity.len(),
            });
        }
        for t in 0..n_trees {
            let column = &multiplicity[t * n_samples..(t + 1) * n_samples];
            if bootstrap {
                let total: u64 = column.iter().map(|&c| u64::from(c)).sum();
                if total != n_samples as u64 {
                    return Err(Error::MalformedModel(format!(
                        "tree {t}: bootstrap multiplicities sum to {total}, expected {n_samples}"
                    )));
                }
            } else if column.iter().any(|&c| c != 1) {
                return Err(Error::MalformedModel(format!(
                    "tree {t}: multiplicities must all be 1 without bootstrap"
                )));
            }
        }
        Ok(Self::build(n_samples, n_trees, bootstrap, multiplicity))
    }

    fn build(n_samples: usize, n_trees: usize, bootstrap: bool, multiplicity: Vec<u32>) -> Self {
        let mut oob_counts = vec![0u32; n_samples];
        for t in 0..n_trees {
            for (j, &c) in multiplicity[t * n_samples..(t + 1) * n_samples]
                .iter()
                .enumerate()
            {
                if c == 0 {
                    oob_counts[j] += 1;
                }
            }
        }
        Self {
            n_samples,
            n_trees,
            bootstrap,
            multiplicity,
            oob_counts,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_trees(&self) -> usize {
        self.n_trees
    }

    /// Whether the trees were fit on bootstrap samples.
    pub fn is_bootstrap(&self) -> bool {
        self.bootstrap
    }

    /// `c_j(t)`.
    #[inline]
    pub fn multiplicity(&self, j: usize, t: usize) -> u32 {
        self.multiplicity[t * self.n_samples + j]
    }

    /// Multiplicities of every sample in tree `t`.
    pub fn tree_multiplicities(&self, t: usize) -> &[u32] {
        &self.multiplicity[t * self.n_samples..(t + 1) * self.n_samples]
    }

    #[inline]
    pub fn is_oob(&self, i: usize, t: usize) -> bool {
        self.multiplicity(i, t) == 0
    }

    /// `|S_i|`, the number of trees where sample `i` is out of bag.
    pub fn oob_count(&self, i: usize) -> u32 {
        self.oob_counts[i]
    }

    pub fn oob_counts(&self) -> &[u32] {
        &self.oob_counts
    }

    /// Number of samples that are in bag for every tree.
    pub fn never_oob(&self) -> usize {
        self.oob_counts.iter().filter(|&&c| c == 0).count()
    }
}

/// In-bag multiplicity mass of every leaf, `|M(t)|` per leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafMass {
    per_tree: Vec<Vec<u64>>,
}

impl LeafMass {
    /// Mass of local leaf `leaf` in tree `t`.
    #[inline]
    pub fn mass(&self, t: usize, leaf: u32) -> u64 {
        self.per_tree[t][leaf as usize]
    }

    pub fn tree(&self, t: usize) -> &[u64] {
        &self.per_tree[t]
    }

    pub fn n_trees(&self) -> usize {
        self.per_tree.len()
    }
}

/// Sum multiplicities over the training samples routed to each leaf.
/// `assignment` must be the leaf table of the training matrix itself.
pub fn compute_leaf_mass(
    ensemble: &Ensemble,
    assignment: &LeafAssignment,
    bagging: &BaggingRecord,
) -> Result<LeafMass> {
    if assignment.n_samples() != bagging.n_samples() {
        return Err(Error::ShapeMismatch {
            what: "leaf assignment samples",
            expected: bagging.n_samples(),
            found: assignment.n_samples(),
        });
    }
    if assignment.n_trees() != bagging.n_trees() || assignment.n_trees() != ensemble.n_trees() {
        return Err(Error::ShapeMismatch {
            what: "leaf assignment trees",
            expected: ensemble.n_trees(),
            found: assignment.n_trees(),
        });
    }
    let mut per_tree = Vec::with_capacity(ensemble.n_trees());
    for (t, tree) in ensemble.trees().iter().enumerate() {
        let mut masses = vec![0u64; tree.leaf_count()];
        for (&leaf, &c) in assignment
            .tree(t)
            .iter()
            .zip(bagging.tree_multiplicities(t))
        {
            let slot = masses
                .get_mut(leaf as usize)
                .ok_or(Error::IndexOutOfRange {
                    what: "leaf id",
                    index: leaf as usize,
                    bound: tree.leaf_count(),
                })?;
            *slot += u64::from(c);
        }
        per_tree.push(masses);
    }
    Ok(LeafMass { per_tree })
}
