//! Compressed sparse row matrices and the `A·Bᵀ` product kernel.
//!
//! Every matrix in the proximity pipeline (the factors `Q`, `W` and the
//! proximity matrix `P`) is a [`SparseMatrix`]. Rows are stored with
//! strictly increasing column indices, which keeps outputs canonical and
//! byte-comparable across runs.

mod mtx;

pub use mtx::{read_matrix_market, write_matrix_market, write_matrix_market_to};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Densification is refused above this many cells.
pub const DENSE_LIMIT: usize = 10_000_000;

/// Rows handed to one rayon task in [`spgemm_transposed`].
const ROW_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from raw CSR arrays, checking every structural invariant.
    pub fn try_new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 {
            return Err(Error::ShapeMismatch {
                what: "row_ptr length",
                expected: n_rows + 1,
                found: row_ptr.len(),
            });
        }
        if col_idx.len() != values.len() {
            return Err(Error::ShapeMismatch {
                what: "values length",
                expected: col_idx.len(),
                found: values.len(),
            });
        }
        if row_ptr[0] != 0 || row_ptr[n_rows] != col_idx.len() {
            return Err(Error::Config("row_ptr must start at 0 and end at nnz".into()));
        }
        for r in 0..n_rows {
            let (start, end) = (row_ptr[r], row_ptr[r + 1]);
            if start > end {
                return Err(Error::Config(format!("row_ptr decreases at row {r}")));
            }
            let cols = &col_idx[start..end];
            if let Some(&c) = cols.iter().find(|&&c| c >= n_cols) {
                return Err(Error::IndexOutOfRange {
                    what: "column",
                    index: c,
                    bound: n_cols,
                });
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "columns of row {r} are not strictly increasing"
                )));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let row = row_ptr.partition_point(|&p| p <= pos) - 1;
            return Err(Error::NonFinite { row, col: col_idx[pos] });
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// An `n_rows × n_cols` matrix with no stored entries.
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Sparse identity of order `n`.
    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Assemble from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that end up exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, v) in entries {
            if r >= n_rows {
                return Err(Error::IndexOutOfRange {
                    what: "row",
                    index: r,
                    bound: n_rows,
                });
            }
            if c >= n_cols {
                return Err(Error::IndexOutOfRange {
                    what: "column",
                    index: c,
                    bound: n_cols,
                });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
            counts[r + 1] += 1;
        }
        for r in 0..n_rows {
            counts[r + 1] += counts[r];
        }

        // Bucket by row, keeping input order within a row so that duplicate
        // accumulation is deterministic.
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); entries.len()];
        for &(r, c, v) in entries {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        for r in 0..n_rows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let col = row[i].0;
                let mut sum = 0.0;
                while i < row.len() && row[i].0 == col {
                    sum += row[i].1;
                    i += 1;
                }
                if sum != 0.0 {
                    col_idx.push(col);
                    values.push(sum);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of stored entries in row `i`.
    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Column indices and values of row `i`, without bounds reporting.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Stored `(col, value)` pairs of row `i`.
    pub fn row_slice(&self, i: usize) -> Result<Vec<(usize, f64)>> {
        if i >= self.n_rows {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: i,
                bound: self.n_rows,
            });
        }
        let (cols, vals) = self.row(i);
        Ok(cols.iter().copied().zip(vals.iter().copied()).collect())
    }

    /// Value at `(i, j)`; zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// Iterate `(row, col, value)` over stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Sum of each row's stored values.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> Result<Array2<f64>> {
        let cells = self.n_rows.saturating_mul(self.n_cols);
        if cells > DENSE_LIMIT {
            return Err(Error::Config(format!(
                "refusing to densify a {}x{} matrix ({cells} cells > {DENSE_LIMIT})",
                self.n_rows, self.n_cols
            )));
        }
        let mut dense = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            dense[[r, c]] = v;
        }
        Ok(dense)
    }

    /// CSR form of the transpose (equivalently, the CSC form of `self`).
    pub fn transpose(&self) -> SparseMatrix {
        let mut row_ptr = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            row_ptr[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            row_ptr[c + 1] += row_ptr[c];
        }
        let mut next = row_ptr.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Scanning source rows in order leaves each output row sorted.
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let dst = next[c];
                col_idx[dst] = r;
                values[dst] = v;
                next[c] += 1;
            }
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Compute `A·Bᵀ` for two CSR matrices sharing a column space.
///
/// Row-wise Gustavson accumulation: `B` is transposed once so that each
/// stored `A[i,k]` scatters into a dense accumulator through row `k` of
/// `Bᵀ`. A symbolic pass counts the entries of every output row so the
/// result is allocated once at its exact size; the numeric pass then fills
/// disjoint row blocks in parallel. Output rows come out sorted by column,
/// and contributions to a given output cell are summed in increasing `k`
/// order.
pub fn spgemm_transposed(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    if a.n_cols != b.n_cols {
        return Err(Error::ShapeMismatch {
            what: "inner dimension of A·Bᵀ",
            expected: a.n_cols,
            found: b.n_cols,
        });
    }
    let bt = b.transpose();
    let out_cols = b.n_rows;
    let chunk = ROW_CHUNK.max(1);

    // Symbolic pass: `mark[j] == i + 1` means column j already counted in row i.
    let counts: Vec<usize> = (0..a.n_rows)
        .into_par_iter()
        .chunks(chunk)
        .flat_map_iter(|rows| {
            let mut mark = vec![0usize; out_cols];
            rows.into_iter()
                .map(|i| {
                    let mut len = 0;
                    for &k in a.row(i).0 {
                        for &j in bt.row(k).0 {
                            if mark[j] != i + 1 {
                                mark[j] = i + 1;
                                len += 1;
                            }
                        }
                    }
                    len
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(a.n_rows + 1);
    row_ptr.push(0);
    for len in &counts {
        row_ptr.push(row_ptr.last().unwrap() + len);
    }
    drop(counts);
    let nnz = row_ptr[a.n_rows];
    let mut col_idx = vec![0usize; nnz];
    let mut values = vec![0.0f64; nnz];

    let mut blocks = Vec::new();
    let (mut rest_c, mut rest_v) = (col_idx.as_mut_slice(), values.as_mut_slice());
    for start in (0..a.n_rows).step_by(chunk) {
        let end = (start + chunk).min(a.n_rows);
        let len = row_ptr[end] - row_ptr[start];
        let (c, tail_c) = rest_c.split_at_mut(len);
        let (v, tail_v) = rest_v.split_at_mut(len);
        blocks.push((start, end, c, v));
        rest_c = tail_c;
        rest_v = tail_v;
    }

    blocks.into_par_iter().for_each(|(start, end, cols, vals)| {
        let mut acc = vec![0.0f64; out_cols];
        let mut touched = vec![false; out_cols];
        let mut pattern: Vec<usize> = Vec::new();
        let base = row_ptr[start];
        for i in start..end {
            let (a_cols, a_vals) = a.row(i);
            for (&k, &a_ik) in a_cols.iter().zip(a_vals) {
                let (b_rows, b_vals) = bt.row(k);
                for (&j, &b_jk) in b_rows.iter().zip(b_vals) {
                    if !touched[j] {
                        touched[j] = true;
                        pattern.push(j);
                    }
                    acc[j] += a_ik * b_jk;
                }
            }
            pattern.sort_unstable();
            let offset = row_ptr[i] - base;
            for (slot, &j) in pattern.iter().enumerate() {
                cols[offset + slot] = j;
                vals[offset + slot] = acc[j];
                acc[j] = 0.0;
                touched[j] = false;
            }
            pattern.clear();
        }
    });

    Ok(SparseMatrix {
        n_rows: a.n_rows,
        n_cols: out_cols,
        row_ptr,
        col_idx,
        values,
    })
}
