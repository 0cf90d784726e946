use ndarray::ArrayView2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_matrix, route_rows, Ensemble, LeafAssignment, Task, Tree, TreeNode};
use crate::bagging::{record_bagging, BaggingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitCriterion {
    /// Gini impurity decrease; targets are class labels.
    Gini,
    /// Variance reduction; targets are real values.
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features drawn per split. `None` means `⌈√p⌉` for classification and
    /// `⌈p/3⌉` for regression.
    pub mtry: Option<usize>,
    pub criterion: SplitCriterion,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            mtry: None,
            criterion: SplitCriterion::Gini,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn classification(n_trees: usize, seed: u64) -> Self {
        Self {
            n_trees,
            seed,
            ..Self::default()
        }
    }

    pub fn regression(n_trees: usize, seed: u64) -> Self {
        Self {
            n_trees,
            seed,
            criterion: SplitCriterion::Variance,
            ..Self::default()
        }
    }

    /// Features per split for `p` columns.
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or(match self.criterion {
            SplitCriterion::Gini => (p as f64).sqrt().ceil() as usize,
            SplitCriterion::Variance => p.div_ceil(3),
        })
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be positive".into()));
        }
        let mtry = self.resolved_mtry(p);
        if mtry == 0 || mtry > p {
            return Err(Error::Config(format!(
                "mtry = {mtry} must lie in 1..={p}"
            )));
        }
        Ok(())
    }
}

enum Targets {
    Classes { labels: Vec<u32>, classes: Vec<f64> },
    Values(Vec<f64>),
}

/// Fit `cfg.n_trees` CART trees, each on its own bootstrap sample (or on all
/// rows when `cfg.bootstrap` is false).
///
/// Tree `t` draws from a ChaCha stream keyed by `(cfg.seed, t)`, so the
/// result does not depend on how trees are scheduled across threads.
pub fn train_forest(x: ArrayView2<f64>, y: &[f64], cfg: &TrainConfig) -> Result<Ensemble> {
    let (n, p) = x.dim();
    if n == 0 || p == 0 {
        return Err(Error::EmptyInput("training matrix"));
    }
    if n < 2 {
        return Err(Error::Config("training needs at least 2 samples".into()));
    }
    if n > u32::MAX as usize {
        return Err(Error::Config(format!("at most {} training samples", u32::MAX)));
    }
    if y.len() != n {
        return Err(Error::ShapeMismatch {
            what: "targets",
            expected: n,
            found: y.len(),
        });
    }
    check_matrix(&x, None)?;
    cfg.validate(p)?;
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidLabel {
            row,
            reason: "target is not finite".into(),
        });
    }

    let (targets, task) = match cfg.criterion {
        SplitCriterion::Gini => {
            let mut classes = y.to_vec();
            classes.sort_by(f64::total_cmp);
            classes.dedup();
            let labels = y
                .iter()
                .map(|v| classes.binary_search_by(|c| c.total_cmp(v)).unwrap() as u32)
                .collect();
            (
                Targets::Classes {
                    labels,
                    classes: classes.clone(),
                },
                Task::Classification { classes },
            )
        }
        SplitCriterion::Variance => (Targets::Values(y.to_vec()), Task::Regression),
    };

    let x = x.as_standard_layout();
    let data = x.as_slice().expect("standard layout");
    let keys: Vec<u64> = data.iter().map(|&v| order_key(v)).collect();
    let mtry = cfg.resolved_mtry(p);

    let fitted: Vec<(Tree, Vec<usize>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let mut sample: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let draw = sample.clone();
            let grower = Grower {
                data,
                keys: &keys,
                p,
                mtry,
                targets: &targets,
                cfg,
                rng,
                nodes: Vec::new(),
                n_leaves: 0,
                buf: Vec::with_capacity(n),
            };
            let nodes = grower.grow(&mut sample);
            let tree = Tree::new(nodes, 0, t).expect("grown trees are well formed");
            (tree, draw)
        })
        .collect();

    let (trees, draws): (Vec<Tree>, Vec<Vec<usize>>) = fitted.into_iter().unzip();
    let bagging = if cfg.bootstrap {
        record_bagging(n, &draws)?
    } else {
        BaggingRecord::without_resampling(n, cfg.n_trees)
    };

    let training_leaves = LeafAssignment::from_columns(n, route_rows(&trees, data, p))?;
    Ensemble::from_parts(
        trees,
        p,
        vec![1.0; cfg.n_trees],
        bagging,
        training_leaves,
        cfg.seed,
        task,
    )
}

struct Grower<'a> {
    data: &'a [f64],
    /// `order_key` of every entry of `data`, same layout.
    keys: &'a [u64],
    p: usize,
    mtry: usize,
    targets: &'a Targets,
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    n_leaves: u32,
    buf: Vec<(u64, u32)>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    /// Grow depth-first, left child first, so leaf ids follow a pre-order walk.
    fn grow(mut self, sample: &mut [usize]) -> Vec<TreeNode> {
        // (node slot, start, end, depth)
        let mut stack = vec![(0usize, 0usize, sample.len(), 0usize)];
        self.nodes.push(TreeNode::Leaf {
            leaf_id: 0,
            value: 0.0,
        });
        while let Some((slot, start, end, depth)) = stack.pop() {
            let members = &mut sample[start..end];
            match self.best_split(members, depth) {
                Some(split) => {
                    let n_left = partition(members, |i| {
                        self.data[i * self.p + split.feature] <= split.threshold
                    });
                    let left = self.nodes.len();
                    let right = left + 1;
                    self.nodes.push(TreeNode::Leaf {
                        leaf_id: 0,
                        value: 0.0,
                    });
                    self.nodes.push(TreeNode::Leaf {
                        leaf_id: 0,
                        value: 0.0,
                    });
                    self.nodes[slot] = TreeNode::Internal {
                        feature: split.feature,
                        threshold: split.threshold,
                        left,
                        right,
                    };
                    stack.push((right, start + n_left, end, depth + 1));
                    stack.push((left, start, start + n_left, depth + 1));
                }
                None => {
                    let value = self.leaf_value(members);
                    self.nodes[slot] = TreeNode::Leaf {
                        leaf_id: self.n_leaves,
                        value,
                    };
                    self.n_leaves += 1;
                }
            }
        }
        self.nodes
    }

    fn leaf_value(&self, members: &[usize]) -> f64 {
        match self.targets {
            Targets::Classes { labels, classes } => {
                let mut counts = vec![0usize; classes.len()];
                for &i in members {
                    counts[labels[i] as usize] += 1;
                }
                // Majority; lowest class index on ties.
                let best = (0..classes.len())
                    .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                classes[best]
            }
            Targets::Values(values) => {
                members.iter().map(|&i| values[i]).sum::<f64>() / members.len() as f64
            }
        }
    }

    fn is_pure(&self, members: &[usize]) -> bool {
        match self.targets {
            Targets::Classes { labels, .. } => {
                let first = labels[members[0]];
                members.iter().all(|&i| labels[i] == first)
            }
            Targets::Values(values) => {
                let first = values[members[0]];
                members.iter().all(|&i| values[i] == first)
            }
        }
    }

    fn best_split(&mut self, members: &[usize], depth: usize) -> Option<Split> {
        let n = members.len();
        let min_leaf = self.cfg.min_samples_leaf;
        if self.cfg.max_depth.is_some_and(|d| depth >= d)
            || n < 2 * min_leaf
            || self.is_pure(members)
        {
            return None;
        }

        let mut features = index::sample(&mut self.rng, self.p, self.mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<Split> = None;
        for feature in features {
            self.buf.clear();
            self.buf
                .extend(members.iter().map(|&i| (self.keys[i * self.p + feature], i as u32)));
            self.buf.sort_unstable_by_key(|e| e.0);
            if self.buf[0].0 == self.buf[n - 1].0 {
                continue;
            }
            let candidate = match self.targets {
                Targets::Classes { labels, classes } => {
                    best_gini_cut(&self.buf, labels, classes.len(), min_leaf)
                }
                Targets::Values(values) => best_variance_cut(&self.buf, values, min_leaf),
            };
            if let Some((pos, gain)) = candidate {
                // Strict comparison keeps the lowest feature index on ties.
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let lo = self.data[self.buf[pos - 1].1 as usize * self.p + feature];
                    let hi = self.data[self.buf[pos].1 as usize * self.p + feature];
                    best = Some(Split {
                        feature,
                        threshold: midpoint(lo, hi),
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Unsigned key whose integer order is the numeric order of finite `v`.
/// `-0.0` and `0.0` share a key, so equal keys mean equal values.
fn order_key(v: f64) -> u64 {
    let bits = (v + 0.0).to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | 1 << 63
    }
}

/// A threshold `m` with `lo <= m < hi`, at the midpoint when representable.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= lo && m < hi {
        m
    } else {
        lo
    }
}

/// Relative tolerance below which a gain is treated as zero.
const GAIN_EPS: f64 = 1e-13;

/// Best cut position (samples `..pos` go left) for sorted `(value, sample)`
/// pairs, maximising the Gini decrease. Returns the position and gain.
fn best_gini_cut(
    sorted: &[(u64, u32)],
    labels: &[u32],
    n_classes: usize,
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = sorted.len();
    let mut right = vec![0f64; n_classes];
    for &(_, i) in sorted {
        right[labels[i as usize] as usize] += 1.0;
    }
    let mut left = vec![0f64; n_classes];
    let parent_ss: f64 = right.iter().map(|c| c * c).sum();
    let parent = parent_ss / n as f64;
    let mut left_ss = 0.0;
    let mut right_ss = parent_ss;

    let mut best: Option<(usize, f64)> = None;
    for pos in 1..n {
        let c = labels[sorted[pos - 1].1 as usize] as usize;
        left_ss += 2.0 * left[c] + 1.0;
        left[c] += 1.0;
        right_ss -= 2.0 * right[c] - 1.0;
        right[c] -= 1.0;
        if pos < min_leaf || n - pos < min_leaf || sorted[pos - 1].0 == sorted[pos].0 {
            continue;
        }
        let gain = left_ss / pos as f64 + right_ss / (n - pos) as f64 - parent;
        if gain > GAIN_EPS * parent && best.is_none_or(|(_, g)| gain > g) {
            best = Some((pos, gain));
        }
    }
    best
}

/// Variance-reduction analogue of [`best_gini_cut`].
fn best_variance_cut(
    sorted: &[(u64, u32)],
    values: &[f64],
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = sorted.len();
    let total: f64 = sorted.iter().map(|&(_, i)| values[i as usize]).sum();
    let parent = total * total / n as f64;
    let scale = sorted
        .iter()
        .map(|&(_, i)| values[i as usize] * values[i as usize])
        .sum::<f64>();
    let mut left_sum = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for pos in 1..n {
        left_sum += values[sorted[pos - 1].1 as usize];
        if pos < min_leaf || n - pos < min_leaf || sorted[pos - 1].0 == sorted[pos].0 {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / pos as f64
            + right_sum * right_sum / (n - pos) as f64
            - parent;
        if gain > GAIN_EPS * scale.max(f64::MIN_POSITIVE) && best.is_none_or(|(_, g)| gain > g) {
            best = Some((pos, gain));
        }
    }
    best
}

/// In-place partition; returns how many elements satisfy `pred` (now first).
fn partition(items: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for j in 0..items.len() {
        if pred(items[j]) {
            items.swap(k, j);
            k += 1;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_rows_give_single_leaf_trees() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let y = [0.0, 1.0, 0.0, 1.0];
        let e = train_forest(x.view(), &y, &TrainConfig::classification(3, 7)).unwrap();
        assert_eq!(e.n_trees(), 3);
        assert!(e.trees().iter().all(|t| t.leaf_count() == 1));
    }

    #[test]
    fn two_rows_one_perfect_split() {
        let x = array![[0.0], [1.0]];
        let cfg = TrainConfig {
            n_trees: 1,
            bootstrap: false,
            ..TrainConfig::default()
        };
        let e = train_forest(x.view(), &[0.0, 1.0], &cfg).unwrap();
        let tree = &e.trees()[0];
        assert_eq!(tree.leaf_count(), 2);
        match tree.nodes()[tree.root()] {
            TreeNode::Internal { threshold, .. } => assert!(threshold > 0.0 && threshold < 1.0),
            TreeNode::Leaf { .. } => panic!("root should split"),
        }
    }

    #[test]
    fn midpoint_stays_below_upper_value() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let m = midpoint(lo, hi);
        assert!(m >= lo && m < hi);
        assert_eq!(midpoint(0.0, 1.0), 0.5);
    }

    #[test]
    fn gini_cut_prefers_lowest_threshold_on_ties() {
        // Labels 0 1 0 1 ... every cut between distinct values has the same
        // gain pattern; a symmetric layout gives equal gains at positions 1
        // and 3.
        let sorted: Vec<(u64, u32)> = (0..4).map(|i| (order_key(i as f64), i)).collect();
        let labels = [0, 1, 1, 0];
        let (pos, _) = best_gini_cut(&sorted, &labels, 2, 1).unwrap();
        assert_eq!(pos, 1);
    }

    #[test]
    fn order_keys_follow_numeric_order() {
        let vals = [-1e300, -2.5, -f64::MIN_POSITIVE, -0.0, 0.0, 1e-310, 1.0, 7.25, f64::MAX];
        for w in vals.windows(2) {
            assert!(order_key(w[0]) <= order_key(w[1]));
            assert_eq!(order_key(w[0]) == order_key(w[1]), w[0] == w[1]);
        }
    }

    #[test]
    fn config_errors() {
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        let y = [0.0, 1.0];
        let mut cfg = TrainConfig::classification(2, 0);
        cfg.mtry = Some(3);
        assert!(matches!(
            train_forest(x.view(), &y, &cfg),
            Err(Error::Config(_))
        ));
        let empty = ndarray::Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            train_forest(empty.view(), &[], &TrainConfig::default()),
            Err(Error::EmptyInput(_))
        ));
        let bad = array![[0.0, f64::INFINITY], [1.0, 0.0]];
        assert!(matches!(
            train_forest(bad.view(), &y, &TrainConfig::default()),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn default_mtry() {
        assert_eq!(TrainConfig::classification(1, 0).resolved_mtry(10), 4);
        assert_eq!(TrainConfig::regression(1, 0).resolved_mtry(10), 4);
        assert_eq!(TrainConfig::regression(1, 0).resolved_mtry(9), 3);
        assert_eq!(TrainConfig::classification(1, 0).resolved_mtry(16), 4);
    }

    #[test]
    fn regression_splits_on_signal() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [1.0, 1.0, 5.0, 5.0];
        let cfg = TrainConfig {
            bootstrap: false,
            ..TrainConfig::regression(1, 0)
        };
        let e = train_forest(x.view(), &y, &cfg).unwrap();
        let tree = &e.trees()[0];
        assert_eq!(tree.leaf_count(), 2);
        assert_eq!(tree.leaf_value(tree.leaf_of(&[0.5])), 1.0);
        assert_eq!(tree.leaf_value(tree.leaf_of(&[2.5])), 5.0);
    }
}
