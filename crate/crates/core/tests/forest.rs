mod common;

use leafprox::bagging::{compute_leaf_mass, record_bagging, BaggingRecord};
use leafprox::ensemble::{load_ensemble, save_ensemble, to_json_bytes};
use leafprox::{apply, train_forest, Error, TrainConfig, TreeNode};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_row_config() -> TrainConfig {
    TrainConfig {
        bootstrap: false,
        ..TrainConfig::classification(1, 0)
    }
}

#[test]
fn identical_rows_give_single_leaf_trees() {
    let x = Array2::from_elem((4, 3), 2.5);
    let e = train_forest(x.view(), &[0.0, 1.0, 0.0, 1.0], &TrainConfig::classification(3, 9)).unwrap();
    assert_eq!(e.n_trees(), 3);
    for tree in e.trees() {
        assert_eq!(tree.leaf_count(), 1);
        assert_eq!(tree.nodes().len(), 1);
    }
}

#[test]
fn two_rows_give_one_perfect_split() {
    let x = array![[0.0], [1.0]];
    let e = train_forest(x.view(), &[0.0, 1.0], &two_row_config()).unwrap();
    let tree = &e.trees()[0];
    assert_eq!(tree.leaf_count(), 2);
    let internal: Vec<_> = tree
        .nodes()
        .iter()
        .filter_map(|n| match n {
            TreeNode::Internal { threshold, .. } => Some(*threshold),
            TreeNode::Leaf { .. } => None,
        })
        .collect();
    assert_eq!(internal.len(), 1);
    assert!(internal[0] > 0.0 && internal[0] < 1.0);

    let a = apply(&e, array![[0.0], [1.0]].view()).unwrap();
    assert_ne!(a.get(0, 0), a.get(1, 0));
    assert_eq!(a.get(0, 0), e.training_leaves().get(0, 0));
}

#[test]
fn oob_error_on_separated_gaussians() {
    let (x, y) = common::two_gaussians(200, 2, 3.0, 17);
    let e = train_forest(x.view(), &y, &TrainConfig::classification(50, 17)).unwrap();
    let reported = e.oob_error(&y).unwrap();

    // Independent OOB vote straight from the trees and the multiplicity table.
    let mut wrong = 0;
    let mut voted = 0;
    for i in 0..200 {
        let mut votes = [0usize; 2];
        for (t, tree) in e.trees().iter().enumerate() {
            if e.bagging().multiplicity(i, t) == 0 {
                let leaf = tree.leaf_of(x.row(i).as_slice().unwrap());
                votes[tree.leaf_value(leaf) as usize] += 1;
            }
        }
        if votes[0] + votes[1] == 0 {
            continue;
        }
        voted += 1;
        let pred = if votes[1] > votes[0] { 1.0 } else { 0.0 };
        if pred != y[i] {
            wrong += 1;
        }
    }
    let expected = wrong as f64 / voted as f64;
    assert_eq!(reported, expected);
    assert!(reported <= 0.15, "OOB error {reported}");
}

#[test]
fn apply_is_deterministic_and_total() {
    let (x, y) = common::random_classification(50, 5, 3, 4);
    let e = train_forest(x.view(), &y, &TrainConfig::classification(10, 4)).unwrap();
    let a = apply(&e, x.view()).unwrap();
    let b = apply(&e, x.view()).unwrap();
    assert_eq!(a, b);
    assert_eq!(&a, e.training_leaves());
    for t in 0..e.n_trees() {
        for i in 0..50 {
            assert!((a.get(i, t) as usize) < e.trees()[t].leaf_count());
        }
    }
    assert!(matches!(
        apply(&e, Array2::zeros((3, 4)).view()),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn training_is_deterministic() {
    let (x, y) = common::random_classification(120, 6, 4, 8);
    let cfg = TrainConfig::classification(50, 8);
    let a = to_json_bytes(&train_forest(x.view(), &y, &cfg).unwrap()).unwrap();
    let b = to_json_bytes(&train_forest(x.view(), &y, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = TrainConfig { seed: 9, ..cfg };
    let c = to_json_bytes(&train_forest(x.view(), &y, &other).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = common::random_classification(80, 4, 3, 2);
    let e = train_forest(x.view(), &y, &TrainConfig::classification(50, 2)).unwrap();
    let path = dir.path().join("model.json");
    save_ensemble(&e, &path).unwrap();
    let back = load_ensemble(&path).unwrap();
    assert_eq!(back, e);
    assert_eq!(to_json_bytes(&back).unwrap(), std::fs::read(&path).unwrap());

    let probe = array![[0.1, 0.2, 0.3, 0.4], [0.9, 0.8, 0.7, 0.6]];
    assert_eq!(apply(&back, probe.view()).unwrap(), apply(&e, probe.view()).unwrap());

    // The two-row tree as well.
    let small = train_forest(array![[0.0], [1.0]].view(), &[0.0, 1.0], &two_row_config()).unwrap();
    save_ensemble(&small, &path).unwrap();
    let back = load_ensemble(&path).unwrap();
    let probe = array![[-1.0], [0.25], [0.5], [0.75], [3.0]];
    assert_eq!(apply(&back, probe.view()).unwrap(), apply(&small, probe.view()).unwrap());
}

#[test]
fn regression_forest_trains() {
    let (x, _) = common::random_classification(60, 3, 2, 5);
    let y: Vec<f64> = x.outer_iter().map(|r| r[0] * 2.0 - r[1]).collect();
    let e = train_forest(x.view(), &y, &TrainConfig::regression(20, 5)).unwrap();
    let mse = e.oob_error(&y).unwrap();
    let var = {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64
    };
    assert!(mse < var, "oob mse {mse} vs variance {var}");
}

#[test]
fn training_input_errors() {
    let x = array![[0.0, 1.0], [1.0, f64::NAN]];
    assert!(matches!(
        train_forest(x.view(), &[0.0, 1.0], &TrainConfig::classification(2, 0)),
        Err(Error::NonFinite { row: 1, col: 1 })
    ));
    let x = Array2::<f64>::zeros((0, 2));
    assert!(matches!(
        train_forest(x.view(), &[], &TrainConfig::classification(2, 0)),
        Err(Error::EmptyInput(_))
    ));
    let x = array![[0.0, 1.0], [1.0, 0.0]];
    let cfg = TrainConfig {
        mtry: Some(3),
        ..TrainConfig::classification(2, 0)
    };
    assert!(train_forest(x.view(), &[0.0, 1.0], &cfg).unwrap_err().is_config());
}

#[test]
fn leaf_exhaustiveness() {
    // Per tree, the in-bag samples routed to each leaf partition the
    // bootstrap sample: summing multiplicities over leaves recovers N.
    let (x, y) = common::random_classification(100, 4, 3, 12);
    let e = train_forest(x.view(), &y, &TrainConfig::classification(20, 12)).unwrap();
    for t in 0..e.n_trees() {
        let mut per_leaf = vec![0u64; e.trees()[t].leaf_count()];
        for j in 0..100 {
            per_leaf[e.training_leaves().get(j, t) as usize] += e.bagging().multiplicity(j, t) as u64;
        }
        assert_eq!(per_leaf.iter().sum::<u64>(), 100);
        // Leaves are grown from in-bag samples, so none is empty.
        assert!(per_leaf.iter().all(|&m| m >= 1), "tree {t}: {per_leaf:?}");
    }
}

#[test]
fn bagging_direct_count() {
    let rec = record_bagging(3, &[vec![0, 0, 2]]).unwrap();
    assert_eq!(rec.tree_multiplicities(0), &[2, 0, 1]);
    assert_eq!(
        (0..3).map(|i| rec.is_oob(i, 0)).collect::<Vec<_>>(),
        vec![false, true, false]
    );
    assert_eq!(rec.oob_counts(), &[0, 1, 0]);

    let none = BaggingRecord::without_resampling(4, 3);
    assert!((0..4).all(|i| none.oob_count(i) == 0 && (0..3).all(|t| none.multiplicity(i, t) == 1)));

    assert!(matches!(
        record_bagging(3, &[vec![0, 3, 1]]),
        Err(Error::IndexOutOfRange { .. })
    ));
}

#[test]
fn oob_fraction_matches_bootstrap_limit() {
    let (n, t_n) = (1000, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<Vec<usize>> = (0..t_n)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect();
    let rec = record_bagging(n, &draws).unwrap();

    // Direct simulation oracle: count absences straight from the draws.
    let mut absent = 0usize;
    for d in &draws {
        let mut seen = vec![false; n];
        for &j in d {
            seen[j] = true;
        }
        absent += seen.iter().filter(|s| !**s).count();
    }
    let from_record: usize = rec.oob_counts().iter().map(|&c| c as usize).sum();
    assert_eq!(from_record, absent);
    let fraction = from_record as f64 / (n * t_n) as f64;
    assert!((fraction - 0.367).abs() <= 0.03, "{fraction}");

    // Duality, exhaustively.
    for i in 0..n {
        for t in 0..t_n {
            assert_eq!(rec.is_oob(i, t), rec.multiplicity(i, t) == 0);
        }
    }
}

#[test]
fn leaf_mass_examples() {
    // Single-leaf tree, draw {0,0,2}: all mass in the root.
    let x = Array2::from_elem((3, 1), 1.0);
    let e = train_forest(x.view(), &[0.0, 0.0, 0.0], &TrainConfig::classification(1, 0)).unwrap();
    let rec = record_bagging(3, &[vec![0, 0, 2]]).unwrap();
    let mass = compute_leaf_mass(&e, e.training_leaves(), &rec).unwrap();
    assert_eq!(mass.tree(0), &[3]);

    // The two-row tree without resampling.
    let e = train_forest(array![[0.0], [1.0]].view(), &[0.0, 1.0], &two_row_config()).unwrap();
    let mass = compute_leaf_mass(&e, e.training_leaves(), e.bagging()).unwrap();
    assert_eq!(mass.tree(0), &[1, 1]);

    // Conservation on a random ensemble.
    let (x, y) = common::random_classification(100, 4, 3, 21);
    let e = train_forest(x.view(), &y, &TrainConfig::classification(20, 21)).unwrap();
    let mass = compute_leaf_mass(&e, e.training_leaves(), e.bagging()).unwrap();
    for t in 0..20 {
        let direct: u64 = (0..100).map(|j| e.bagging().multiplicity(j, t) as u64).sum();
        assert_eq!(mass.tree(t).iter().sum::<u64>(), direct);
        assert_eq!(direct, 100);
    }

    // Size mismatch between assignment and bagging.
    let short = BaggingRecord::without_resampling(99, 20);
    assert!(compute_leaf_mass(&e, e.training_leaves(), &short).is_err());
}
