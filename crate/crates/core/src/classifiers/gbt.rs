//! Gradient-boosted shallow regression trees on multiclass log-loss.
//!
//! One-vs-rest additive scheme: per round, each class fits a depth-bounded
//! regression tree to its softmax residuals with Newton leaf values. Split
//! search runs on per-feature quantile bins computed once from the training
//! data, which keeps one hundred rounds of five trees cheap.

use super::softmax5;
use crate::error::{Error, Result};
use crate::types::{SleepStage, NUM_STAGES};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

const MAX_BINS: usize = 64;
const MIN_LEAF: usize = 5;
const HESS_EPS: f64 = 1e-9;

/// A regression tree node over binned features; thresholds are stored as raw
/// feature values so prediction does not need the binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegNode {
    pub value: f64,
    pub split: Option<(usize, f64, Box<RegNode>, Box<RegNode>)>,
}

impl RegNode {
    fn predict(&self, row: &[f64]) -> f64 {
        match &self.split {
            None => self.value,
            Some((f, t, l, r)) => {
                if row[*f] < *t {
                    l.predict(row)
                } else {
                    r.predict(row)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Log-prior initial score per class.
    pub init_scores: [f64; NUM_STAGES],
    /// One regression tree per class per boosting round.
    pub rounds: Vec<[RegNode; NUM_STAGES]>,
    pub shrinkage: f64,
    pub n_features: usize,
}

impl GbtModel {
    pub fn predict_scores(&self, row: &[f64]) -> [f64; NUM_STAGES] {
        let mut scores = self.init_scores;
        for round in &self.rounds {
            for (k, tree) in round.iter().enumerate() {
                scores[k] += self.shrinkage * tree.predict(row);
            }
        }
        scores
    }

    pub fn predict_proba(&self, row: &[f64]) -> [f64; NUM_STAGES] {
        softmax5(&self.predict_scores(row))
    }

    pub fn predict(&self, row: &[f64]) -> SleepStage {
        let p = self.predict_proba(row);
        let best = (0..NUM_STAGES).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        SleepStage::from_code(best).unwrap()
    }
}

/// Per-feature quantile binning shared across all rounds.
struct Binned {
    /// Bin index per (row, feature).
    bins: Vec<u8>,
    /// Split threshold between bin b and b+1, per feature.
    edges: Vec<Vec<f64>>,
    n_features: usize,
}

impl Binned {
    fn build(x: &Array2<f64>) -> Self {
        let (n_rows, n_features) = (x.nrows(), x.ncols());
        let mut bins = vec![0u8; n_rows * n_features];
        let mut edges = Vec::with_capacity(n_features);
        let mut sorted = Vec::with_capacity(n_rows);
        for f in 0..n_features {
            sorted.clear();
            sorted.extend(x.column(f).iter().copied());
            sorted.sort_unstable_by(f64::total_cmp);
            sorted.dedup();
            // At most MAX_BINS quantile cut values between distinct levels.
            let mut cuts: Vec<f64> = if sorted.len() <= MAX_BINS {
                sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                (1..MAX_BINS)
                    .map(|q| {
                        let idx = q * (sorted.len() - 1) / MAX_BINS;
                        0.5 * (sorted[idx] + sorted[idx + 1])
                    })
                    .collect()
            };
            cuts.dedup();
            for r in 0..n_rows {
                let v = x[[r, f]];
                let b = cuts.partition_point(|&c| v >= c);
                bins[r * n_features + f] = b as u8;
            }
            edges.push(cuts);
        }
        let _ = n_rows;
        Self { bins, edges, n_features }
    }

    fn bin(&self, row: usize, feature: usize) -> usize {
        self.bins[row * self.n_features + feature] as usize
    }
}

struct TreeFitter<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
}

impl<'a> TreeFitter<'a> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        g / (h + HESS_EPS)
    }

    fn fit(&self, rows: &[usize], depth: usize) -> RegNode {
        let value = self.leaf_value(rows);
        if depth >= self.max_depth || rows.len() < 2 * MIN_LEAF {
            return RegNode { value, split: None };
        }
        let g_total: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h_total: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let parent_gain = g_total * g_total / (h_total + HESS_EPS);

        let mut best: Option<(f64, usize, usize)> = None; // (gain, feature, bin cut)
        let n_bins = MAX_BINS.max(2);
        let mut g_by_bin = vec![0.0f64; n_bins];
        let mut h_by_bin = vec![0.0f64; n_bins];
        let mut c_by_bin = vec![0usize; n_bins];

        for f in 0..self.binned.n_features {
            let cuts = &self.binned.edges[f];
            if cuts.is_empty() {
                continue;
            }
            g_by_bin.iter_mut().for_each(|v| *v = 0.0);
            h_by_bin.iter_mut().for_each(|v| *v = 0.0);
            c_by_bin.iter_mut().for_each(|v| *v = 0);
            for &r in rows {
                let b = self.binned.bin(r, f);
                g_by_bin[b] += self.grad[r];
                h_by_bin[b] += self.hess[r];
                c_by_bin[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for cut in 0..cuts.len() {
                gl += g_by_bin[cut];
                hl += h_by_bin[cut];
                cl += c_by_bin[cut];
                let cr = rows.len() - cl;
                if cl < MIN_LEAF || cr < MIN_LEAF {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain =
                    gl * gl / (hl + HESS_EPS) + gr * gr / (hr + HESS_EPS) - parent_gain;
                if gain > 1e-12 && best.map_or(true, |(bg, _, _)| gain > bg) {
                    best = Some((gain, f, cut));
                }
            }
        }

        match best {
            None => RegNode { value, split: None },
            Some((_, f, cut)) => {
                let threshold = self.binned.edges[f][cut];
                let (mut lrows, mut rrows) = (Vec::new(), Vec::new());
                for &r in rows {
                    if self.binned.bin(r, f) <= cut {
                        lrows.push(r);
                    } else {
                        rrows.push(r);
                    }
                }
                let left = self.fit(&lrows, depth + 1);
                let right = self.fit(&rrows, depth + 1);
                RegNode {
                    value,
                    split: Some((f, threshold, Box::new(left), Box::new(right))),
                }
            }
        }
    }
}

/// Fits a boosted model; returns it with the per-round training log-loss.
pub fn gbt_fit(
    x: &Array2<f64>,
    labels: &[SleepStage],
    n_trees: usize,
    shrinkage: f64,
    max_depth: usize,
) -> Result<(GbtModel, Vec<f64>)> {
    if x.nrows() == 0 {
        return Err(Error::Fit("boosting needs at least one row".into()));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows vs {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let n = x.nrows();

    let mut counts = [0usize; NUM_STAGES];
    for l in labels {
        counts[l.code()] += 1;
    }
    let init_scores: [f64; NUM_STAGES] =
        std::array::from_fn(|k| ((counts[k] as f64 / n as f64).max(1e-12)).ln());

    let binned = Binned::build(x);
    let mut scores: Vec<[f64; NUM_STAGES]> = vec![init_scores; n];
    let mut model = GbtModel {
        init_scores,
        rounds: Vec::with_capacity(n_trees),
        shrinkage,
        n_features: x.ncols(),
    };
    let all_rows: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(n_trees + 1);
    let log_loss = |scores: &Vec<[f64; NUM_STAGES]>| -> f64 {
        scores
            .iter()
            .zip(labels)
            .map(|(s, l)| -softmax5(s)[l.code()].max(1e-12).ln())
            .sum::<f64>()
            / n as f64
    };
    loss_trace.push(log_loss(&scores));

    let mut grad = vec![0.0f64; n];
    let mut hess = vec![0.0f64; n];
    for _ in 0..n_trees {
        let probs: Vec<[f64; NUM_STAGES]> = scores.iter().map(softmax5).collect();
        let round: [RegNode; NUM_STAGES] = std::array::from_fn(|k| {
            for i in 0..n {
                let p = probs[i][k];
                let y = (labels[i].code() == k) as usize as f64;
                grad[i] = y - p;
                hess[i] = p * (1.0 - p);
            }
            let fitter = TreeFitter { binned: &binned, grad: &grad, hess: &hess, max_depth };
            fitter.fit(&all_rows, 0)
        });
        for (i, s) in scores.iter_mut().enumerate() {
            let row: Vec<f64> = x.row(i).to_vec();
            for (k, tree) in round.iter().enumerate() {
                s[k] += shrinkage * tree.predict(&row);
            }
        }
        model.rounds.push(round);
        loss_trace.push(log_loss(&scores));
    }
    Ok((model, loss_trace))
}
