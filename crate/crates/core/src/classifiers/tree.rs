//! Greedy CART decision tree with Gini impurity.

use crate::error::{Error, Result};
use crate::types::{SleepStage, NUM_STAGES};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// An internal split: rows with `value < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSplit {
    pub feature_index: usize,
    pub threshold: f64,
    pub left: Box<TreeNode>,
    pub right: Box<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Fraction of the training data routed through this node.
    pub n_fraction: f64,
    /// Stage distribution of the training rows here, in stage-code order.
    pub class_ratios: [f64; NUM_STAGES],
    pub majority: SleepStage,
    /// `None` for leaves.
    pub split: Option<TreeSplit>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn depth(&self) -> usize {
        match &self.split {
            None => 0,
            Some(s) => 1 + s.left.depth().max(s.right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub n_features: usize,
}

/// One routing step of an explanation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteStep {
    pub feature_index: usize,
    pub threshold: f64,
    pub value: f64,
    pub went_left: bool,
}

fn gini(counts: &[usize; NUM_STAGES], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

fn counts_of(labels: &[SleepStage], rows: &[usize]) -> [usize; NUM_STAGES] {
    let mut counts = [0usize; NUM_STAGES];
    for &r in rows {
        counts[labels[r].code()] += 1;
    }
    counts
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    labels: &'a [SleepStage],
    max_depth: usize,
    min_leaf: usize,
    n_total: usize,
}

impl<'a> Builder<'a> {
    fn node(&self, rows: &[usize], depth: usize) -> TreeNode {
        let counts = counts_of(self.labels, rows);
        let total = rows.len();
        let mut class_ratios = [0.0; NUM_STAGES];
        for (r, &c) in class_ratios.iter_mut().zip(&counts) {
            *r = c as f64 / total as f64;
        }
        let majority_code = (0..NUM_STAGES).max_by_key(|&k| (counts[k], NUM_STAGES - k)).unwrap();
        let majority = SleepStage::from_code(majority_code).unwrap();

        let parent_gini = gini(&counts, total);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let mut split = None;
        if depth < self.max_depth && !pure && total >= 2 * self.min_leaf {
            if let Some((feature_index, threshold)) = self.best_split(rows, &counts, parent_gini) {
                let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
                for &r in rows {
                    if self.x[[r, feature_index]] < threshold {
                        left_rows.push(r);
                    } else {
                        right_rows.push(r);
                    }
                }
                let left = self.node(&left_rows, depth + 1);
                let right = self.node(&right_rows, depth + 1);
                split = Some(TreeSplit {
                    feature_index,
                    threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                });
            }
        }

        TreeNode {
            n_fraction: total as f64 / self.n_total as f64,
            class_ratios,
            majority,
            split,
        }
    }

    /// Best (feature, threshold) by Gini gain over midpoints of consecutive
    /// distinct values; ties keep the lower feature index, then the lower
    /// threshold.
    fn best_split(
        &self,
        rows: &[usize],
        parent_counts: &[usize; NUM_STAGES],
        parent_gini: f64,
    ) -> Option<(usize, f64)> {
        let total = rows.len();
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)

        let mut order: Vec<(f64, usize)> = Vec::with_capacity(total);
        for f in 0..self.x.ncols() {
            order.clear();
            for &r in rows {
                order.push((self.x[[r, f]], self.labels[r].code()));
            }
            order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let mut left_counts = [0usize; NUM_STAGES];
            let mut left_n = 0usize;
            for w in 0..total - 1 {
                let (value, code) = order[w];
                left_counts[code] += 1;
                left_n += 1;
                let next_value = order[w + 1].0;
                if next_value == value {
                    continue; // threshold must separate distinct values
                }
                let right_n = total - left_n;
                if left_n < self.min_leaf || right_n < self.min_leaf {
                    continue;
                }
                let mut right_counts = [0usize; NUM_STAGES];
                for k in 0..NUM_STAGES {
                    right_counts[k] = parent_counts[k] - left_counts[k];
                }
                let weighted = (left_n as f64 * gini(&left_counts, left_n)
                    + right_n as f64 * gini(&right_counts, right_n))
                    / total as f64;
                let gain = parent_gini - weighted;
                let threshold = 0.5 * (value + next_value);
                if gain > 1e-12 && best.map_or(true, |(bg, _, _)| gain > bg) {
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl DecisionTree {
    /// Fits a CART tree on feature rows and aligned stage labels.
    pub fn fit(
        x: &Array2<f64>,
        labels: &[SleepStage],
        max_depth: usize,
        min_leaf: usize,
    ) -> Result<Self> {
        if x.nrows() == 0 || labels.is_empty() {
            return Err(Error::Fit("decision tree needs at least one row".into()));
        }
        if x.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows vs {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        let min_leaf = min_leaf.max(1);
        let builder = Builder {
            x,
            labels,
            max_depth,
            min_leaf,
            n_total: x.nrows(),
        };
        let rows: Vec<usize> = (0..x.nrows()).collect();
        Ok(Self {
            root: builder.node(&rows, 0),
            max_depth,
            min_leaf,
            n_features: x.ncols(),
        })
    }

    /// Routes one feature row to a leaf; returns its majority stage and the
    /// training class ratios there.
    pub fn predict(&self, row: &[f64]) -> (SleepStage, [f64; NUM_STAGES]) {
        let mut node = &self.root;
        while let Some(s) = &node.split {
            node = if row[s.feature_index] < s.threshold {
                &s.left
            } else {
                &s.right
            };
        }
        (node.majority, node.class_ratios)
    }

    /// Like [`DecisionTree::predict`], also returning the routing decisions.
    pub fn predict_with_trace(&self, row: &[f64]) -> (SleepStage, [f64; NUM_STAGES], Vec<RouteStep>) {
        let mut node = &self.root;
        let mut steps = Vec::new();
        while let Some(s) = &node.split {
            let value = row[s.feature_index];
            let went_left = value < s.threshold;
            steps.push(RouteStep {
                feature_index: s.feature_index,
                threshold: s.threshold,
                value,
                went_left,
            });
            node = if went_left { &s.left } else { &s.right };
        }
        (node.majority, node.class_ratios, steps)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn stages(codes: &[usize]) -> Vec<SleepStage> {
        codes.iter().map(|&c| SleepStage::from_code(c).unwrap()).collect()
    }

    #[test]
    fn single_class_gives_root_leaf() {
        let x = array![[0.1], [0.5], [0.9]];
        let tree = DecisionTree::fit(&x, &stages(&[2, 2, 2]), 9, 1).unwrap();
        assert!(tree.root.is_leaf());
        assert_eq!(tree.root.majority, SleepStage::N2);
        assert_eq!(tree.root.n_fraction, 1.0);
    }

    #[test]
    fn one_dimensional_toy_splits_at_midpoint() {
        let x = array![[0.1], [0.2], [0.8], [0.9]];
        let labels = stages(&[0, 0, 1, 1]);
        let tree = DecisionTree::fit(&x, &labels, 9, 1).unwrap();
        let split = tree.root.split.as_ref().expect("root must split");
        assert_eq!(split.feature_index, 0);
        assert!((split.threshold - 0.5).abs() < 1e-12);
        // Parent Gini 0.5, both children pure: gain 0.5.
        assert!(split.left.is_leaf() && split.right.is_leaf());
        assert_eq!(split.left.class_ratios[0], 1.0);
        assert_eq!(split.right.class_ratios[1], 1.0);
    }

    #[test]
    fn depth_limit_is_respected() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((64, 4), |_| rng.gen_range(0.0..1.0));
        let labels = stages(&(0..64).map(|i| i % 5).collect::<Vec<_>>());
        let tree = DecisionTree::fit(&x, &labels, 1, 1).unwrap();
        assert!(tree.depth() <= 1);
    }

    #[test]
    fn unlimited_depth_memorizes_training_data() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((100, 6), |_| rng.gen_range(0.0..1.0));
        let labels = stages(&(0..100).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let tree = DecisionTree::fit(&x, &labels, usize::MAX, 1).unwrap();
        for i in 0..100 {
            let row: Vec<f64> = x.row(i).to_vec();
            assert_eq!(tree.predict(&row).0, labels[i]);
        }
    }

    #[test]
    fn root_leaf_predicts_majority_everywhere() {
        let x = array![[0.0], [1.0], [2.0]];
        let tree = DecisionTree::fit(&x, &stages(&[4, 4, 1]), 0, 1).unwrap();
        assert!(tree.root.is_leaf());
        for v in [0.0, 0.7, 5.0] {
            assert_eq!(tree.predict(&[v]).0, SleepStage::Rem);
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((60, 3), |_| rng.gen_range(0.0..1.0));
        let labels = stages(&(0..60).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let tree = DecisionTree::fit(&x, &labels, 9, 1).unwrap();
        let row = vec![0.3, 0.6, 0.1];
        assert_eq!(tree.predict(&row), tree.predict(&row));
    }

    #[test]
    fn split_gains_are_nonnegative_throughout() {
        fn check(node: &TreeNode, n_total: f64) {
            if let Some(s) = &node.split {
                let node_gini = 1.0 - node.class_ratios.iter().map(|p| p * p).sum::<f64>();
                let wl = s.left.n_fraction / node.n_fraction;
                let wr = s.right.n_fraction / node.n_fraction;
                let child = wl * (1.0 - s.left.class_ratios.iter().map(|p| p * p).sum::<f64>())
                    + wr * (1.0 - s.right.class_ratios.iter().map(|p| p * p).sum::<f64>());
                assert!(child <= node_gini + 1e-12, "weighted child Gini grew");
                check(&s.left, n_total);
                check(&s.right, n_total);
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((200, 5), |_| rng.gen_range(0.0..1.0));
        let labels = stages(&(0..200).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let tree = DecisionTree::fit(&x, &labels, 9, 2).unwrap();
        check(&tree.root, 200.0);
    }

    #[test]
    fn leaf_ratios_match_recounted_routing() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((150, 4), |_| rng.gen_range(0.0..1.0));
        let labels = stages(&(0..150).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let tree = DecisionTree::fit(&x, &labels, 4, 3).unwrap();

        // Route every training row, tally empirical distributions per leaf
        // (keyed by pointer via the ratio array), and compare.
        let mut recount: std::collections::HashMap<String, [usize; NUM_STAGES]> =
            std::collections::HashMap::new();
        for i in 0..150 {
            let row: Vec<f64> = x.row(i).to_vec();
            let (_, ratios) = tree.predict(&row);
            let key = format!("{ratios:?}");
            recount.entry(key).or_default()[labels[i].code()] += 1;
        }
        for (key, counts) in recount {
            let total: usize = counts.iter().sum();
            let ratios: [f64; NUM_STAGES] =
                std::array::from_fn(|k| counts[k] as f64 / total as f64);
            assert_eq!(key, format!("{ratios:?}"), "leaf ratios drifted from recount");
        }
    }

    #[test]
    fn rescaled_features_and_thresholds_commute() {
        // Scaling by a power of two keeps midpoint arithmetic exact.
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let x = Array2::from_shape_fn((80, 3), |_| rng.gen_range(0.0..1.0));
        let labels = stages(&(0..80).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let x4 = x.mapv(|v| 4.0 * v);
        let t1 = DecisionTree::fit(&x, &labels, 6, 2).unwrap();
        let t4 = DecisionTree::fit(&x4, &labels, 6, 2).unwrap();
        for i in 0..80 {
            let r1: Vec<f64> = x.row(i).to_vec();
            let r4: Vec<f64> = x4.row(i).to_vec();
            assert_eq!(t1.predict(&r1).0, t4.predict(&r4).0);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let x = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            DecisionTree::fit(&x, &[], 9, 1),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn trace_depth_is_bounded_by_tree_depth() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x = Array2::from_shape_fn((100, 4), |_| rng.gen_range(0.0..1.0));
        let labels = stages(&(0..100).map(|_| rng.gen_range(0..5)).collect::<Vec<_>>());
        let tree = DecisionTree::fit(&x, &labels, 5, 1).unwrap();
        let (_, _, steps) = tree.predict_with_trace(&[0.5, 0.5, 0.5, 0.5]);
        assert!(steps.len() <= 5);
    }
}
