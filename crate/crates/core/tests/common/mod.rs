#![allow(dead_code)]

use std::collections::HashMap;

use leafprox::{Ensemble, Scheme};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two unit-variance Gaussian classes centred at `±sep/2` on every axis.
pub fn two_gaussians(n: usize, p: usize, sep: f64, seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, p));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as f64;
        let centre = if class == 0.0 { -sep / 2.0 } else { sep / 2.0 };
        for f in 0..p {
            x[[i, f]] = centre + rng.sample::<f64, _>(StandardNormal);
        }
        y.push(class);
    }
    (x, y)
}

/// Uniform features in [0, 1) with labels from a noisy linear rule.
pub fn random_classification(n: usize, p: usize, n_classes: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>());
    let y = x
        .outer_iter()
        .map(|row| {
            let s: f64 = row.iter().enumerate().map(|(f, v)| v * (f + 1) as f64).sum();
            let noise: f64 = rng.random::<f64>() * 0.5;
            (((s + noise) * n_classes as f64 / (p * (p + 1) / 2) as f64) as usize).min(n_classes - 1)
                as f64
        })
        .collect();
    (x, y)
}

/// `P[i][j] = Σ_t q(i,t)·w(j,t)·[leaf_i(t) = leaf_j(t)]` with every weight
/// recomputed here from the multiplicity and leaf tables.
pub fn first_principles(e: &Ensemble, scheme: Scheme) -> Array2<f64> {
    let n = e.n_train();
    let t_n = e.n_trees();
    let leaves = e.training_leaves();
    let bag = e.bagging();

    let mut q = vec![vec![0.0; t_n]; n];
    let mut w = vec![vec![0.0; t_n]; n];
    match scheme {
        Scheme::Original => {
            for i in 0..n {
                for t in 0..t_n {
                    q[i][t] = 1.0 / t_n as f64;
                    w[i][t] = 1.0;
                }
            }
        }
        Scheme::Gbt => {
            let total: f64 = e.tree_weights().iter().sum();
            for i in 0..n {
                for t in 0..t_n {
                    q[i][t] = e.tree_weights()[t] / total;
                    w[i][t] = 1.0;
                }
            }
        }
        Scheme::RfGap => {
            for t in 0..t_n {
                let mut mass: HashMap<u32, u64> = HashMap::new();
                for j in 0..n {
                    *mass.entry(leaves.get(j, t)).or_default() += bag.multiplicity(j, t) as u64;
                }
                for j in 0..n {
                    let m = mass[&leaves.get(j, t)];
                    if m > 0 {
                        w[j][t] = bag.multiplicity(j, t) as f64 / m as f64;
                    }
                }
            }
            for i in 0..n {
                let oob: Vec<usize> = (0..t_n).filter(|&t| bag.multiplicity(i, t) == 0).collect();
                for &t in &oob {
                    q[i][t] = 1.0 / oob.len() as f64;
                }
            }
        }
    }

    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..t_n {
                if leaves.get(i, t) == leaves.get(j, t) {
                    acc += q[i][t] * w[j][t];
                }
            }
            p[[i, j]] = acc;
        }
    }
    p
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
