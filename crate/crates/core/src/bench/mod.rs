//! Wall-clock and peak-memory scaling of sparse vs pairwise proximities.
//!
//! Each timed run is end to end: forest training, scheme weights, and the
//! proximity matrix. Runs execute serially.

mod dataset;
mod fit;
mod memory;
mod report;

pub use dataset::{benchmark_blobs, gaussian_blobs, load_idx, Dataset};
pub use fit::{fit_power_law, PowerLawFit};
pub use memory::{MemoryMetric, PeakProbe, TrackingAllocator};
pub use report::{emit_report, write_csv, ReportPaths, CSV_HEADER};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::ensemble::{train_forest, Ensemble, TrainConfig};
use crate::error::{Error, Result};
use crate::oracle::proximity_naive_sparse;
use crate::proximity::{build_factors, Scheme, SchemeWeights};
use crate::sparse::{spgemm_transposed, SparseMatrix};

/// Default largest `N` for timed pairwise runs. The pairwise benchmark
/// path keeps rows sparse, so this bounds running time rather than memory.
pub const NAIVE_BENCH_GUARD: usize = 32_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// `P = Q·Wᵀ` through the sparse factors.
    Sparse,
    /// Pairwise `O(N²T)` comparison, one row at a time.
    Naive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sparse => "sparse",
            Method::Naive => "naive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Method::Sparse),
            "naive" => Ok(Method::Naive),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected sparse or naive)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Ascending subset sizes.
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    pub methods: Vec<Method>,
    /// Trial `k` trains with seed `train.seed + k`.
    pub train: TrainConfig,
    /// Naive runs above this `N` are skipped.
    pub naive_guard: usize,
    /// Run (and discard) one untimed run before each configuration.
    pub warmup: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2_000, 4_000, 8_000, 16_000, 32_000],
            trials: 3,
            schemes: vec![Scheme::Original, Scheme::RfGap],
            methods: vec![Method::Sparse, Method::Naive],
            train: TrainConfig::classification(100, 0),
            naive_guard: NAIVE_BENCH_GUARD,
            warmup: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRun {
    pub method: Method,
    pub scheme: Scheme,
    pub n: usize,
    pub trial: usize,
    pub wall_seconds: f64,
    pub peak_bytes: usize,
    pub nnz_p: usize,
    /// `nnz(Q) + nnz(W)`; only for the sparse method.
    pub nnz_factors: Option<usize>,
    pub n_trees: usize,
    /// Largest number of training samples sharing one leaf of one tree.
    pub max_leaf_size: usize,
    pub memory_metric: MemoryMetric,
    pub threads: usize,
}

impl BenchRun {
    /// `nnz(P) ≤ N·T·max_leaf_size`.
    pub fn within_nnz_bound(&self) -> bool {
        self.nnz_p <= self.n * self.n_trees * self.max_leaf_size
    }

    /// `nnz(Q) + nnz(W) ≤ 2NT` (vacuously true for the naive method).
    pub fn within_factor_bound(&self) -> bool {
        self.nnz_factors
            .is_none_or(|nnz| nnz <= 2 * self.n * self.n_trees)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedRun {
    pub method: Method,
    pub scheme: Scheme,
    pub n: usize,
    pub reason: String,
}

/// Sparse vs naive agreement at one size.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceCheck {
    pub scheme: Scheme,
    pub n: usize,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScalingResult {
    pub runs: Vec<BenchRun>,
    pub skipped: Vec<SkippedRun>,
    pub equivalence: Vec<EquivalenceCheck>,
}

/// Exponents for one `(method, scheme)` curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurveFit {
    pub method: Method,
    pub scheme: Scheme,
    /// Fit of mean wall-clock seconds against N.
    pub time: Option<PowerLawFit>,
    /// Fit of mean peak bytes against N.
    pub memory: Option<PowerLawFit>,
}

struct RunOutput {
    p: SparseMatrix,
    nnz_factors: Option<usize>,
    ensemble: Ensemble,
}

fn proximity_end_to_end(
    x: ArrayView2<f64>,
    y: &[f64],
    method: Method,
    scheme: Scheme,
    train: &TrainConfig,
) -> Result<RunOutput> {
    let ensemble = train_forest(x, y, train)?;
    let (p, nnz_factors) = {
        let weights = SchemeWeights::new(&ensemble, scheme)?;
        match method {
            Method::Sparse => {
                let f = build_factors(&ensemble, ensemble.training_leaves(), &weights)?;
                (spgemm_transposed(&f.q, &f.w)?, Some(f.nnz()))
            }
            Method::Naive => (proximity_naive_sparse(&ensemble, &weights)?, None),
        }
    };
    Ok(RunOutput {
        p,
        nnz_factors,
        ensemble,
    })
}

fn max_leaf_size(e: &Ensemble) -> usize {
    let mut best = 0;
    for (t, tree) in e.trees().iter().enumerate() {
        let mut counts = vec![0usize; tree.leaf_count()];
        for &leaf in e.training_leaves().tree(t) {
            counts[leaf as usize] += 1;
        }
        best = best.max(counts.into_iter().max().unwrap_or(0));
    }
    best
}

/// Largest entrywise difference between two sparse matrices of equal shape.
pub fn max_abs_diff(a: &SparseMatrix, b: &SparseMatrix) -> Result<f64> {
    if (a.n_rows(), a.n_cols()) != (b.n_rows(), b.n_cols()) {
        return Err(Error::ShapeMismatch {
            what: "compared matrices",
            expected: a.n_rows() * a.n_cols(),
            found: b.n_rows() * b.n_cols(),
        });
    }
    let mut worst = 0.0f64;
    for i in 0..a.n_rows() {
        let (ca, va) = a.row(i);
        let (cb, vb) = b.row(i);
        let (mut p, mut q) = (0, 0);
        while p < ca.len() || q < cb.len() {
            let diff = match (ca.get(p), cb.get(q)) {
                (Some(&x), Some(&y)) if x == y => {
                    p += 1;
                    q += 1;
                    va[p - 1] - vb[q - 1]
                }
                (Some(&x), Some(&y)) if x < y => {
                    p += 1;
                    va[p - 1]
                }
                (Some(_), None) => {
                    p += 1;
                    va[p - 1]
                }
                _ => {
                    q += 1;
                    vb[q - 1]
                }
            };
            worst = worst.max(diff.abs());
        }
    }
    Ok(worst)
}

/// Time every `(N, scheme, method)` configuration `cfg.trials` times on the
/// first `N` rows of `data`.
pub fn run_scaling(data: &Dataset, cfg: &BenchConfig) -> Result<ScalingResult> {
    if cfg.sizes.is_empty() || cfg.trials == 0 {
        return Err(Error::Config("need at least one size and one trial".into()));
    }
    if cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sizes must be strictly ascending".into()));
    }
    let largest = *cfg.sizes.last().unwrap();
    if largest > data.n_samples() {
        return Err(Error::DatasetTooSmall {
            available: data.n_samples(),
            requested: largest,
        });
    }
    let threads = rayon::current_num_threads();
    let mut result = ScalingResult::default();

    for &n in &cfg.sizes {
        let (x, y) = data.head(n)?;
        for &scheme in &cfg.schemes {
            for &method in &cfg.methods {
                if method == Method::Naive && n > cfg.naive_guard {
                    result.skipped.push(SkippedRun {
                        method,
                        scheme,
                        n,
                        reason: format!("N = {n} exceeds the naive guard of {}", cfg.naive_guard),
                    });
                    continue;
                }
                if cfg.warmup {
                    proximity_end_to_end(x, y, method, scheme, &cfg.train)?;
                }
                for trial in 0..cfg.trials {
                    let train = TrainConfig {
                        seed: cfg.train.seed.wrapping_add(trial as u64),
                        ..cfg.train.clone()
                    };
                    let probe = PeakProbe::start();
                    let metric = probe.metric();
                    let started = Instant::now();
                    let out = proximity_end_to_end(x, y, method, scheme, &train)?;
                    let wall_seconds = started.elapsed().as_secs_f64();
                    let peak_bytes = probe.finish();
                    result.runs.push(BenchRun {
                        method,
                        scheme,
                        n,
                        trial,
                        wall_seconds,
                        peak_bytes,
                        nnz_p: out.p.nnz(),
                        nnz_factors: out.nnz_factors,
                        n_trees: out.ensemble.n_trees(),
                        max_leaf_size: max_leaf_size(&out.ensemble),
                        memory_metric: metric,
                        threads,
                    });
                }
            }
        }
    }

    // Spot-check agreement at the smallest size.
    let n = cfg.sizes[0];
    if cfg.methods.contains(&Method::Sparse)
        && cfg.methods.contains(&Method::Naive)
        && n <= cfg.naive_guard
    {
        let (x, y) = data.head(n)?;
        for &scheme in &cfg.schemes {
            let sparse = proximity_end_to_end(x, y, Method::Sparse, scheme, &cfg.train)?;
            let naive = proximity_end_to_end(x, y, Method::Naive, scheme, &cfg.train)?;
            result.equivalence.push(EquivalenceCheck {
                scheme,
                n,
                max_abs_diff: max_abs_diff(&sparse.p, &naive.p)?,
            });
        }
    }
    Ok(result)
}

/// Power-law fits of mean time and mean peak memory per `(method, scheme)`.
/// Curves with fewer than three sizes get no fit.
pub fn fit_curves(runs: &[BenchRun]) -> Vec<CurveFit> {
    let mut groups: BTreeMap<(Method, &'static str), BTreeMap<usize, Vec<&BenchRun>>> =
        BTreeMap::new();
    for run in runs {
        groups
            .entry((run.method, run.scheme.name()))
            .or_default()
            .entry(run.n)
            .or_default()
            .push(run);
    }
    groups
        .into_iter()
        .map(|((method, scheme_name), by_n)| {
            let mean = |f: &dyn Fn(&BenchRun) -> f64| -> Vec<(f64, f64)> {
                by_n.iter()
                    .map(|(&n, rs)| {
                        (n as f64, rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64)
                    })
                    .collect()
            };
            CurveFit {
                method,
                scheme: scheme_name.parse().expect("scheme names round-trip"),
                time: fit_power_law(&mean(&|r| r.wall_seconds)).ok(),
                memory: fit_power_law(&mean(&|r| r.peak_bytes as f64)).ok(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(sizes: Vec<usize>, methods: Vec<Method>) -> BenchConfig {
        BenchConfig {
            sizes,
            trials: 1,
            schemes: vec![Scheme::Original],
            methods,
            train: TrainConfig::classification(10, 1),
            naive_guard: 1_000,
            warmup: false,
        }
    }

    #[test]
    fn single_sparse_run_respects_nnz_bound() {
        let data = benchmark_blobs(1_000, 3);
        let res = run_scaling(&data, &tiny_config(vec![1_000], vec![Method::Sparse])).unwrap();
        assert_eq!(res.runs.len(), 1);
        let run = &res.runs[0];
        assert!(run.within_nnz_bound());
        assert!(run.within_factor_bound());
        assert_eq!(run.nnz_factors, Some(2 * 1_000 * 10));
    }

    #[test]
    fn naive_skipped_above_guard_and_checked_below() {
        let data = benchmark_blobs(1_200, 3);
        let res = run_scaling(
            &data,
            &tiny_config(vec![300, 1_200], vec![Method::Sparse, Method::Naive]),
        )
        .unwrap();
        assert_eq!(res.skipped.len(), 1);
        assert_eq!(res.skipped[0].n, 1_200);
        assert_eq!(res.equivalence.len(), 1);
        assert!(res.equivalence[0].max_abs_diff <= 1e-12);
    }

    #[test]
    fn naive_time_grows_with_n() {
        let data = benchmark_blobs(2_000, 5);
        let mut cfg = tiny_config(vec![1_000, 2_000], vec![Method::Naive]);
        cfg.naive_guard = 2_000;
        let res = run_scaling(&data, &cfg).unwrap();
        assert_eq!(res.runs.len(), 2);
        assert!(res.runs[1].wall_seconds > res.runs[0].wall_seconds);
        assert!(res.runs.iter().all(|r| r.wall_seconds > 0.0 && r.within_nnz_bound()));
    }

    #[test]
    fn input_validation() {
        let data = benchmark_blobs(100, 3);
        assert!(matches!(
            run_scaling(&data, &tiny_config(vec![200], vec![Method::Sparse])),
            Err(Error::DatasetTooSmall { .. })
        ));
        assert!(run_scaling(&data, &tiny_config(vec![50, 20], vec![Method::Sparse])).is_err());
    }

    #[test]
    fn sparse_diff_merges_patterns() {
        let a = SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 2, 2.0)]).unwrap();
        let b = SparseMatrix::from_triplets(2, 3, &[(0, 1, 0.5), (1, 2, 2.25)]).unwrap();
        assert_eq!(max_abs_diff(&a, &b).unwrap(), 1.0);
        assert_eq!(max_abs_diff(&a, &a).unwrap(), 0.0);
    }
}
