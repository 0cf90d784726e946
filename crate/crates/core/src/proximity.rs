//! Separable weighted leaf-collision proximities as a sparse product.
//!
//! A proximity of the form
//!
//! ```text
//! P[i,j] = Σ_t q(i,t) · w(j,t) · 1[leaf_i(t) = leaf_j(t)]
//! ```
//!
//! is computed as `P = Q·Wᵀ`. The columns of `Q` and `W` enumerate every
//! leaf of every tree (tree blocks laid out back to back), and row `i` of
//! `Q` holds `q(i,t)` in the column of the leaf sample `i` reaches in tree
//! `t`. Each row therefore stores at most one entry per tree.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::bagging::{compute_leaf_mass, LeafMass};
use crate::ensemble::{apply, Ensemble, LeafAssignment};
use crate::error::{Error, Result};
use crate::sparse::{spgemm_transposed, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Fraction of trees in which two samples share a leaf.
    Original,
    /// Out-of-bag queries against in-bag, leaf-mass-normalised references.
    RfGap,
    /// Tree-importance weighted collisions.
    Gbt,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Original, Scheme::RfGap, Scheme::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Original => "original",
            Scheme::RfGap => "rf-gap",
            Scheme::Gbt => "gbt",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Scheme::Original),
            "rf-gap" | "rf_gap" | "rfgap" => Ok(Scheme::RfGap),
            "gbt" => Ok(Scheme::Gbt),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected original, rf-gap or gbt)"
            ))),
        }
    }
}

/// Global leaf numbering: tree `t`'s leaves occupy
/// `offsets[t] .. offsets[t] + leaf_count(t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafIndexMap {
    offsets: Vec<usize>,
    total_leaves: usize,
}

impl LeafIndexMap {
    pub fn new(ensemble: &Ensemble) -> Self {
        let mut offsets = Vec::with_capacity(ensemble.n_trees());
        let mut total = 0;
        for tree in ensemble.trees() {
            offsets.push(total);
            total += tree.leaf_count();
        }
        Self {
            offsets,
            total_leaves: total,
        }
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total_leaves(&self) -> usize {
        self.total_leaves
    }

    #[inline]
    pub fn global(&self, tree: usize, local_leaf: u32) -> usize {
        self.offsets[tree] + local_leaf as usize
    }

    /// `(tree, local_leaf)` owning global column `k`.
    pub fn locate(&self, k: usize) -> Option<(usize, u32)> {
        if k >= self.total_leaves {
            return None;
        }
        let t = self.offsets.partition_point(|&o| o <= k) - 1;
        Some((t, (k - self.offsets[t]) as u32))
    }
}

/// The sample-local factors `q(i,t)` and `w(j,t)` of one scheme.
///
/// Neither accessor sees the paired sample, which is what makes the
/// proximity separable.
#[derive(Debug, Clone)]
pub struct SchemeWeights<'a> {
    scheme: Scheme,
    ensemble: &'a Ensemble,
    // q(i,t) for original and gbt, and the unseen-sample weight for every scheme.
    tree_factor: Vec<f64>,
    // 1/|S_i| for rf-gap, 0 when |S_i| = 0.
    inv_oob: Vec<f64>,
    leaf_mass: Option<LeafMass>,
}

impl<'a> SchemeWeights<'a> {
    pub fn new(ensemble: &'a Ensemble, scheme: Scheme) -> Result<Self> {
        match scheme {
            Scheme::Original => Ok(Self::original(ensemble)),
            Scheme::RfGap => Self::rf_gap(ensemble),
            Scheme::Gbt => Self::gbt(ensemble),
        }
    }

    /// `q = 1/T`, `w = 1`.
    pub fn original(ensemble: &'a Ensemble) -> Self {
        let t = ensemble.n_trees();
        Self {
            scheme: Scheme::Original,
            ensemble,
            tree_factor: vec![1.0 / t as f64; t],
            inv_oob: Vec::new(),
            leaf_mass: None,
        }
    }

    /// `q(i,t) = 1[t ∈ S_i] / |S_i|`, `w(j,t) = c_j(t) / |M(leaf_j(t))|`.
    ///
    /// Samples that are never out of bag get an all-zero row; see
    /// [`SchemeWeights::zero_query_rows`].
    pub fn rf_gap(ensemble: &'a Ensemble) -> Result<Self> {
        let bagging = ensemble.bagging();
        if !bagging.is_bootstrap() {
            return Err(Error::Config(
                "rf-gap needs a model trained with bootstrap sampling (retrain without --no-bootstrap)"
                    .into(),
            ));
        }
        if bagging.never_oob() == bagging.n_samples() {
            return Err(Error::Config(
                "rf-gap needs at least one out-of-bag sample".into(),
            ));
        }
        let leaf_mass = compute_leaf_mass(ensemble, ensemble.training_leaves(), bagging)?;
        let inv_oob = bagging
            .oob_counts()
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / f64::from(c) })
            .collect();
        let t = ensemble.n_trees();
        Ok(Self {
            scheme: Scheme::RfGap,
            ensemble,
            tree_factor: vec![1.0 / t as f64; t],
            inv_oob,
            leaf_mass: Some(leaf_mass),
        })
    }

    /// `q(i,t) = w_t / Σ_k w_k`, `w = 1`, with the ensemble's tree weights.
    pub fn gbt(ensemble: &'a Ensemble) -> Result<Self> {
        let weights = ensemble.tree_weights();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config(
                "gbt needs non-negative tree weights with a positive sum".into(),
            ));
        }
        Ok(Self {
            scheme: Scheme::Gbt,
            ensemble,
            tree_factor: weights.iter().map(|w| w / total).collect(),
            inv_oob: Vec::new(),
            leaf_mass: None,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn ensemble(&self) -> &'a Ensemble {
        self.ensemble
    }

    /// `q(i,t)` for training sample `i`.
    #[inline]
    pub fn query_weight(&self, i: usize, t: usize) -> f64 {
        match self.scheme {
            Scheme::Original | Scheme::Gbt => self.tree_factor[t],
            Scheme::RfGap => {
                if self.ensemble.bagging().is_oob(i, t) {
                    self.inv_oob[i]
                } else {
                    0.0
                }
            }
        }
    }

    /// `q(·,t)` for a sample that was not part of training. For rf-gap every
    /// tree counts as out of bag, giving `1/T`.
    #[inline]
    pub fn unseen_query_weight(&self, t: usize) -> f64 {
        self.tree_factor[t]
    }

    /// `w(j,t)` for training sample `j`.
    #[inline]
    pub fn reference_weight(&self, j: usize, t: usize) -> f64 {
        match (&self.leaf_mass, self.scheme) {
            (Some(mass), Scheme::RfGap) => {
                let c = self.ensemble.bagging().multiplicity(j, t);
                if c == 0 {
                    0.0
                } else {
                    let leaf = self.ensemble.training_leaves().get(j, t);
                    f64::from(c) / mass.mass(t, leaf) as f64
                }
            }
            _ => 1.0,
        }
    }

    /// Training rows whose `q` is identically zero (rf-gap samples that are
    /// never out of bag). Their proximity rows are empty.
    pub fn zero_query_rows(&self) -> usize {
        match self.scheme {
            Scheme::RfGap => self.ensemble.bagging().never_oob(),
            _ => 0,
        }
    }
}

/// The two factors of `P = Q·Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub q: SparseMatrix,
    pub w: SparseMatrix,
}

impl Factors {
    pub fn nnz(&self) -> usize {
        self.q.nnz() + self.w.nnz()
    }
}

/// Build a row-per-sample factor over the global leaf columns. Exact zeros
/// are not stored.
fn leaf_factor(
    map: &LeafIndexMap,
    assignment: &LeafAssignment,
    weight: impl Fn(usize, usize) -> f64,
) -> Result<SparseMatrix> {
    let n = assignment.n_samples();
    let n_trees = assignment.n_trees();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n * n_trees);
    let mut values = Vec::with_capacity(n * n_trees);
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(n_trees);
    row_ptr.push(0);
    for i in 0..n {
        row.clear();
        for t in 0..n_trees {
            let v = weight(i, t);
            if v == 0.0 {
                continue;
            }
            let k = map.global(t, assignment.get(i, t));
            if k >= map.total_leaves() {
                return Err(Error::IndexOutOfRange {
                    what: "global leaf column",
                    index: k,
                    bound: map.total_leaves(),
                });
            }
            row.push((k, v));
        }
        // Tree blocks are laid out in order, so rows are already sorted
        // unless a leaf id strays outside its tree's block.
        if row.windows(2).any(|p| p[0].0 >= p[1].0) {
            row.sort_by_key(|e| e.0);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        for &(k, v) in &row {
            col_idx.push(k);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    SparseMatrix::try_new(n, map.total_leaves(), row_ptr, col_idx, values)
}

fn check_assignment(ensemble: &Ensemble, assignment: &LeafAssignment) -> Result<()> {
    if assignment.n_trees() != ensemble.n_trees() {
        return Err(Error::ShapeMismatch {
            what: "leaf assignment trees",
            expected: ensemble.n_trees(),
            found: assignment.n_trees(),
        });
    }
    Ok(())
}

/// `Q` and `W` for the training samples described by `assignment`
/// (normally [`Ensemble::training_leaves`]).
pub fn build_factors(
    ensemble: &Ensemble,
    assignment: &LeafAssignment,
    weights: &SchemeWeights<'_>,
) -> Result<Factors> {
    check_assignment(ensemble, assignment)?;
    if assignment.n_samples() != ensemble.n_train() {
        return Err(Error::ShapeMismatch {
            what: "leaf assignment samples",
            expected: ensemble.n_train(),
            found: assignment.n_samples(),
        });
    }
    let map = LeafIndexMap::new(ensemble);
    let q = leaf_factor(&map, assignment, |i, t| weights.query_weight(i, t))?;
    let w = leaf_factor(&map, assignment, |j, t| weights.reference_weight(j, t))?;
    Ok(Factors { q, w })
}

/// `Q` for samples outside the training set.
pub fn build_query_factor(
    ensemble: &Ensemble,
    assignment: &LeafAssignment,
    weights: &SchemeWeights<'_>,
) -> Result<SparseMatrix> {
    check_assignment(ensemble, assignment)?;
    let map = LeafIndexMap::new(ensemble);
    leaf_factor(&map, assignment, |_, t| weights.unseen_query_weight(t))
}

/// Training-set proximities `P = Q·Wᵀ` (`N × N`), or query-row proximities
/// (`M × N`) when `x_query` is given.
pub fn proximity_sparse(
    ensemble: &Ensemble,
    x_query: Option<ArrayView2<f64>>,
    weights: &SchemeWeights<'_>,
) -> Result<SparseMatrix> {
    match x_query {
        Some(x) => proximity_query_rows(ensemble, x, weights),
        None => {
            let f = build_factors(ensemble, ensemble.training_leaves(), weights)?;
            spgemm_transposed(&f.q, &f.w)
        }
    }
}

/// Proximities of new samples (rows) against the training samples (columns).
pub fn proximity_query_rows(
    ensemble: &Ensemble,
    x_new: ArrayView2<f64>,
    weights: &SchemeWeights<'_>,
) -> Result<SparseMatrix> {
    let assignment = apply(ensemble, x_new)?;
    let q = build_query_factor(ensemble, &assignment, weights)?;
    let map = LeafIndexMap::new(ensemble);
    let w = leaf_factor(&map, ensemble.training_leaves(), |j, t| {
        weights.reference_weight(j, t)
    })?;
    spgemm_transposed(&q, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{train_forest, TrainConfig};
    use ndarray::array;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("breiman".parse::<Scheme>().is_err());
    }

    #[test]
    fn single_leaf_tree_original_factors() {
        let x = array![[1.0], [1.0]];
        let cfg = TrainConfig {
            n_trees: 1,
            bootstrap: false,
            ..TrainConfig::default()
        };
        let e = train_forest(x.view(), &[0.0, 1.0], &cfg).unwrap();
        let w = SchemeWeights::original(&e);
        let f = build_factors(&e, e.training_leaves(), &w).unwrap();
        assert_eq!(f.q.to_dense().unwrap(), array![[1.0], [1.0]]);
        assert_eq!(f.w.to_dense().unwrap(), array![[1.0], [1.0]]);
    }

    #[test]
    fn leaf_index_map_is_a_bijection() {
        let x = array![[0.0, 3.0], [1.0, 2.0], [2.0, 1.0], [3.0, 0.0], [4.0, 4.0]];
        let e = train_forest(x.view(), &[0.0, 1.0, 0.0, 1.0, 1.0], &TrainConfig::classification(4, 3))
            .unwrap();
        let map = LeafIndexMap::new(&e);
        assert_eq!(map.total_leaves(), e.total_leaves());
        for k in 0..map.total_leaves() {
            let (t, leaf) = map.locate(k).unwrap();
            assert!((leaf as usize) < e.trees()[t].leaf_count());
            assert_eq!(map.global(t, leaf), k);
        }
        assert_eq!(map.locate(map.total_leaves()), None);
    }

    #[test]
    fn rf_gap_requires_bootstrap() {
        let x = array![[0.0], [1.0]];
        let cfg = TrainConfig {
            n_trees: 2,
            bootstrap: false,
            ..TrainConfig::default()
        };
        let e = train_forest(x.view(), &[0.0, 1.0], &cfg).unwrap();
        assert!(matches!(SchemeWeights::rf_gap(&e), Err(Error::Config(_))));
    }

    #[test]
    fn empty_query_gives_zero_rows() {
        let x = array![[0.0], [1.0], [2.0]];
        let e = train_forest(x.view(), &[0.0, 1.0, 1.0], &TrainConfig::classification(3, 1))
            .unwrap();
        let w = SchemeWeights::original(&e);
        let empty = ndarray::Array2::<f64>::zeros((0, 1));
        let p = proximity_query_rows(&e, empty.view(), &w).unwrap();
        assert_eq!((p.n_rows(), p.n_cols()), (0, 3));
        let wrong = ndarray::Array2::<f64>::zeros((2, 2));
        assert!(matches!(
            proximity_query_rows(&e, wrong.view(), &w),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
