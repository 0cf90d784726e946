mod common;

use leafprox::bagging::BaggingRecord;
use leafprox::ensemble::{LeafAssignment, Task, Tree, TreeNode};
use leafprox::oracle::{compare, proximity_naive, DEFAULT_GUARD};
use leafprox::proximity::build_query_factor;
use leafprox::{
    apply, build_factors, proximity_query_rows, proximity_sparse, train_forest, Ensemble, Error,
    LeafIndexMap, Scheme, SchemeWeights, TrainConfig,
};
use ndarray::{array, Array2};

fn forest(n: usize, t: usize, seed: u64) -> (Array2<f64>, Ensemble) {
    let (x, y) = common::random_classification(n, 5, 3, seed);
    let e = train_forest(x.view(), &y, &TrainConfig::classification(t, seed)).unwrap();
    (x, e)
}

fn single_leaf(n: usize, bootstrap: bool) -> Ensemble {
    let tree = Tree::new(vec![TreeNode::Leaf { leaf_id: 0, value: 0.0 }], 0, 0).unwrap();
    let bagging = if bootstrap {
        let mut draw = vec![0; n];
        draw[n - 1] = n - 1;
        leafprox::record_bagging(n, &[draw]).unwrap()
    } else {
        BaggingRecord::without_resampling(n, 1)
    };
    Ensemble::from_parts(
        vec![tree],
        2,
        vec![1.0],
        bagging,
        LeafAssignment::from_columns(n, vec![vec![0; n]]).unwrap(),
        0,
        Task::Classification { classes: vec![0.0] },
    )
    .unwrap()
}

#[test]
fn original_factor_structure() {
    let (_, e) = forest(60, 4, 1);
    let w = SchemeWeights::original(&e);
    let f = build_factors(&e, e.training_leaves(), &w).unwrap();
    for i in 0..60 {
        let (_, qv) = f.q.row(i);
        let (_, wv) = f.w.row(i);
        assert_eq!(qv, &[0.25; 4]);
        assert_eq!(wv, &[1.0; 4]);
    }
}

#[test]
fn rf_gap_query_rows_hold_oob_trees() {
    let (_, e) = forest(60, 12, 2);
    let w = SchemeWeights::rf_gap(&e).unwrap();
    let f = build_factors(&e, e.training_leaves(), &w).unwrap();
    for i in 0..60 {
        let s = e.bagging().oob_count(i) as usize;
        let (_, qv) = f.q.row(i);
        assert_eq!(qv.len(), s);
        assert!(qv.iter().all(|&v| v == 1.0 / s as f64));
        assert!(f.w.row_nnz(i) <= 12);
    }
}

#[test]
fn single_leaf_factors_and_products() {
    let e = single_leaf(2, false);
    let w = SchemeWeights::original(&e);
    let f = build_factors(&e, e.training_leaves(), &w).unwrap();
    assert_eq!(f.q.to_dense().unwrap(), array![[1.0], [1.0]]);
    assert_eq!(f.w.to_dense().unwrap(), array![[1.0], [1.0]]);

    let e = single_leaf(3, false);
    let p = proximity_sparse(&e, None, &SchemeWeights::original(&e)).unwrap();
    assert_eq!(p.to_dense().unwrap(), Array2::from_elem((3, 3), 1.0));
    let naive = proximity_naive(&e, &SchemeWeights::original(&e), DEFAULT_GUARD).unwrap();
    assert_eq!(naive, Array2::from_elem((3, 3), 1.0));

    let q = proximity_query_rows(&e, array![[5.0, -2.0]].view(), &SchemeWeights::original(&e)).unwrap();
    assert_eq!(q.to_dense().unwrap(), Array2::from_elem((1, 3), 1.0));
}

#[test]
fn all_schemes_match_both_oracles() {
    let (_, mut e) = forest(150, 20, 3);
    let tw: Vec<f64> = (0..20).map(|t| 0.5 + (t % 7) as f64).collect();
    e.set_tree_weights(tw).unwrap();
    for scheme in Scheme::ALL {
        let w = SchemeWeights::new(&e, scheme).unwrap();
        let sparse = proximity_sparse(&e, None, &w).unwrap();
        let naive = proximity_naive(&e, &w, DEFAULT_GUARD).unwrap();
        let d = compare(&sparse, &naive).unwrap();
        assert!(d.max_abs_diff <= 1e-12, "{scheme}: {d:?}");
        let reference = common::first_principles(&e, scheme);
        let diff = common::max_abs_diff(&sparse.to_dense().unwrap(), &reference);
        assert!(diff <= 1e-12, "{scheme} vs first principles: {diff}");
        let bound = e.n_trees() * max_leaf_size(&e);
        for i in 0..150 {
            assert!(sparse.row_nnz(i) <= bound);
        }
    }
}

fn max_leaf_size(e: &Ensemble) -> usize {
    (0..e.n_trees())
        .map(|t| {
            let mut c = vec![0usize; e.trees()[t].leaf_count()];
            for &l in e.training_leaves().tree(t) {
                c[l as usize] += 1;
            }
            c.into_iter().max().unwrap()
        })
        .max()
        .unwrap()
}

#[test]
fn original_identities() {
    for t in [4, 8, 16, 7, 25] {
        let (_, e) = forest(80, t, t as u64);
        let p = proximity_sparse(&e, None, &SchemeWeights::original(&e)).unwrap();
        let d = p.to_dense().unwrap();
        assert_eq!(d, d.t());
        for i in 0..80 {
            if t.is_power_of_two() {
                assert_eq!(d[[i, i]], 1.0);
            } else {
                assert!((d[[i, i]] - 1.0).abs() <= 1e-12);
            }
        }
        assert!(d.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }
}

#[test]
fn rf_gap_identities() {
    let (_, e) = forest(120, 15, 6);
    let p = proximity_sparse(&e, None, &SchemeWeights::rf_gap(&e).unwrap()).unwrap();
    let d = p.to_dense().unwrap();
    let mut zero_rows = 0;
    for i in 0..120 {
        let row_sum: f64 = d.row(i).sum();
        if e.bagging().oob_count(i) > 0 {
            assert!((row_sum - 1.0).abs() <= 1e-9, "row {i}: {row_sum}");
            assert_eq!(d[[i, i]], 0.0);
        } else {
            zero_rows += 1;
            assert_eq!(row_sum, 0.0);
        }
    }
    assert_eq!(zero_rows, e.bagging().never_oob());
    assert_eq!(SchemeWeights::rf_gap(&e).unwrap().zero_query_rows(), zero_rows);
}

#[test]
fn gbt_identities() {
    let (_, mut e) = forest(70, 9, 7);
    let original = proximity_sparse(&e, None, &SchemeWeights::original(&e)).unwrap();
    let uniform = proximity_sparse(&e, None, &SchemeWeights::gbt(&e).unwrap()).unwrap();
    assert_eq!(uniform, original);

    e.set_tree_weights((0..9).map(|t| t as f64).collect()).unwrap();
    let p = proximity_sparse(&e, None, &SchemeWeights::gbt(&e).unwrap()).unwrap();
    let d = p.to_dense().unwrap();
    assert_eq!(d, d.t());
    for i in 0..70 {
        assert!((d[[i, i]] - 1.0).abs() <= 1e-12);
    }
    assert!(d.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
}

#[test]
fn scheme_configuration_errors() {
    let e = single_leaf(4, false);
    assert!(SchemeWeights::rf_gap(&e).unwrap_err().is_config());
    let mut e = single_leaf(4, true);
    assert!(e.set_tree_weights(vec![0.0]).is_err());
    assert!(e.set_tree_weights(vec![1.0, 1.0]).is_err());
    assert!("nope".parse::<Scheme>().is_err());
    assert_eq!("rf-gap".parse::<Scheme>().unwrap(), Scheme::RfGap);
}

#[test]
fn query_rows() {
    let (x, e) = forest(90, 10, 11);
    let w = SchemeWeights::original(&e);
    let p = proximity_sparse(&e, None, &w).unwrap();
    let probe = x.select(ndarray::Axis(0), &[3, 40, 89]);
    let rows = proximity_query_rows(&e, probe.view(), &w).unwrap();
    for (r, &i) in [3usize, 40, 89].iter().enumerate() {
        assert_eq!(rows.row(r), p.row(i));
    }

    let empty = proximity_query_rows(&e, Array2::zeros((0, 5)).view(), &w).unwrap();
    assert_eq!((empty.n_rows(), empty.n_cols()), (0, 90));
    assert!(matches!(
        proximity_query_rows(&e, Array2::zeros((2, 4)).view(), &w),
        Err(Error::ShapeMismatch { .. })
    ));

    // Unseen rf-gap queries weight every tree by 1/T.
    let gap = SchemeWeights::rf_gap(&e).unwrap();
    let assignment = apply(&e, probe.view()).unwrap();
    let q = build_query_factor(&e, &assignment, &gap).unwrap();
    for r in 0..3 {
        let (_, v) = q.row(r);
        assert_eq!(v, &[0.1; 10]);
    }
}

#[test]
fn leaf_columns_partition() {
    let (_, e) = forest(50, 6, 13);
    let map = LeafIndexMap::new(&e);
    assert_eq!(map.total_leaves(), e.total_leaves());
    let mut seen = vec![false; map.total_leaves()];
    for (t, tree) in e.trees().iter().enumerate() {
        for leaf in 0..tree.leaf_count() as u32 {
            let k = map.global(t, leaf);
            assert!(!seen[k]);
            seen[k] = true;
            assert_eq!(map.locate(k), Some((t, leaf)));
        }
    }
    assert!(seen.into_iter().all(|s| s));
    assert_eq!(map.locate(map.total_leaves()), None);
}
