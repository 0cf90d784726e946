//! Pairwise reference implementation of weighted leaf-collision proximities.
//!
//! Every pair `(i, j)` is visited and its trees are compared one by one, so
//! the cost is `O(N²T)` regardless of sparsity. This is both the correctness
//! oracle for [`crate::proximity`] and the quadratic baseline in benchmarks.
//! It shares only the leaf table and the scheme weight definitions with the
//! factorized path: collisions are detected by comparing `(tree, leaf)`
//! pairs directly, never through global leaf columns.

use ndarray::Array2;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::proximity::SchemeWeights;
use crate::sparse::SparseMatrix;

/// Largest `N` for which [`proximity_naive`] will allocate a dense matrix.
pub const DEFAULT_GUARD: usize = 20_000;

struct PairwiseKernel {
    n: usize,
    n_trees: usize,
    // sample-major copies: leaves[i * T + t], weights likewise
    leaves: Vec<u32>,
    query: Vec<f64>,
    reference: Vec<f64>,
}

impl PairwiseKernel {
    fn new(ensemble: &Ensemble, weights: &SchemeWeights<'_>) -> Self {
        let n = ensemble.n_train();
        let n_trees = ensemble.n_trees();
        let assignment = ensemble.training_leaves();
        let mut leaves = Vec::with_capacity(n * n_trees);
        let mut query = Vec::with_capacity(n * n_trees);
        let mut reference = Vec::with_capacity(n * n_trees);
        for i in 0..n {
            for t in 0..n_trees {
                leaves.push(assignment.get(i, t));
                query.push(weights.query_weight(i, t));
                reference.push(weights.reference_weight(i, t));
            }
        }
        Self {
            n,
            n_trees,
            leaves,
            query,
            reference,
        }
    }

    /// Fill `out[j] = P[i, j]` for every `j`.
    fn row(&self, i: usize, out: &mut [f64]) {
        let t_n = self.n_trees;
        let leaves_i = &self.leaves[i * t_n..(i + 1) * t_n];
        let query_i = &self.query[i * t_n..(i + 1) * t_n];
        for (j, slot) in out.iter_mut().enumerate() {
            let leaves_j = &self.leaves[j * t_n..(j + 1) * t_n];
            let weights_j = &self.reference[j * t_n..(j + 1) * t_n];
            let mut acc = 0.0;
            for t in 0..t_n {
                if leaves_i[t] == leaves_j[t] {
                    acc += query_i[t] * weights_j[t];
                }
            }
            *slot = acc;
        }
    }
}

/// Dense `N × N` proximities over the training set, one row at a time.
pub fn proximity_naive(
    ensemble: &Ensemble,
    weights: &SchemeWeights<'_>,
    guard: usize,
) -> Result<Array2<f64>> {
    let n = ensemble.n_train();
    if n > guard {
        return Err(Error::GuardExceeded { n, guard });
    }
    let kernel = PairwiseKernel::new(ensemble, weights);
    let mut dense = Array2::zeros((n, n));
    for (i, mut row) in dense.outer_iter_mut().enumerate() {
        kernel.row(i, row.as_slice_mut().expect("rows of a fresh array are contiguous"));
    }
    Ok(dense)
}

/// Same pairwise computation, keeping only the non-zero entries of each row.
/// Memory is `O(N + nnz(P))`, so no guard applies.
pub fn proximity_naive_sparse(
    ensemble: &Ensemble,
    weights: &SchemeWeights<'_>,
) -> Result<SparseMatrix> {
    let kernel = PairwiseKernel::new(ensemble, weights);
    let n = kernel.n;
    let mut buf = vec![0.0; n];
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        kernel.row(i, &mut buf);
        for (j, &v) in buf.iter().enumerate() {
            if v != 0.0 {
                col_idx.push(j);
                values.push(v);
            }
        }
        row_ptr.push(col_idx.len());
    }
    SparseMatrix::try_new(n, n, row_ptr, col_idx, values)
}

/// Largest absolute entrywise difference between a sparse and a dense
/// matrix, with the cell where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrepancy {
    pub max_abs_diff: f64,
    pub cell: Option<(usize, usize)>,
}

pub fn compare(sparse: &SparseMatrix, dense: &Array2<f64>) -> Result<Discrepancy> {
    if dense.dim() != (sparse.n_rows(), sparse.n_cols()) {
        return Err(Error::ShapeMismatch {
            what: "compared matrices",
            expected: sparse.n_rows() * sparse.n_cols(),
            found: dense.len(),
        });
    }
    let mut worst = Discrepancy {
        max_abs_diff: 0.0,
        cell: None,
    };
    for (i, row) in dense.outer_iter().enumerate() {
        let (cols, vals) = sparse.row(i);
        let mut next = 0;
        for (j, &d) in row.iter().enumerate() {
            let s = if next < cols.len() && cols[next] == j {
                next += 1;
                vals[next - 1]
            } else {
                0.0
            };
            let diff = (s - d).abs();
            if diff > worst.max_abs_diff || diff.is_nan() {
                worst = Discrepancy {
                    max_abs_diff: diff,
                    cell: Some((i, j)),
                };
            }
        }
    }
    Ok(worst)
}
