//! Multinomial logistic regression trained by full-batch gradient descent
//! with backtracking step halving.


use super::softmax5;
use crate::error::{Error, Result};
use crate::types::{SleepStage, NUM_STAGES};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    /// Feature-major weights, `n_features x 5`.
    pub w: Vec<f64>,
    pub b: [f64; NUM_STAGES],
    pub n_features: usize,
    pub l2: f64,
}

impl LogRegModel {
    pub fn zeros(n_features: usize, l2: f64) -> Self {
        Self {
            w: vec![0.0; n_features * NUM_STAGES],
            b: [0.0; NUM_STAGES],
            n_features,
            l2,
        }
    }

    pub fn predict_proba(&self, row: &[f64]) -> [f64; NUM_STAGES] {
        debug_assert_eq!(row.len(), self.n_features);
        let mut z = self.b;
        for (f, &v) in row.iter().enumerate() {
            let wr = &self.w[f * NUM_STAGES..(f + 1) * NUM_STAGES];
            for (zk, &wk) in z.iter_mut().zip(wr) {
                *zk += wk * v;
            }
        }
        softmax5(&z)
    }

    pub fn predict(&self, row: &[f64]) -> SleepStage {
        let p = self.predict_proba(row);
        let best = (0..NUM_STAGES).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        SleepStage::from_code(best).unwrap()
    }

    /// Regularized mean cross-entropy over a dataset.
    fn loss(&self, x: &Array2<f64>, labels: &[SleepStage]) -> f64 {
        let n = x.nrows() as f64;
        let mut total = 0.0;
        for (i, label) in labels.iter().enumerate() {
            let row: Vec<f64> = x.row(i).to_vec();
            let p = self.predict_proba(&row);
            total -= p[label.code()].max(1e-12).ln();
        }
        let reg: f64 = self.w.iter().map(|w| w * w).sum::<f64>() * self.l2 / 2.0;
        total / n + reg
    }

    fn gradient(&self, x: &Array2<f64>, labels: &[SleepStage]) -> (Vec<f64>, [f64; NUM_STAGES]) {
        let n = x.nrows() as f64;
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = [0.0; NUM_STAGES];
        for (i, label) in labels.iter().enumerate() {
            let row: Vec<f64> = x.row(i).to_vec();
            let mut p = self.predict_proba(&row);
            p[label.code()] -= 1.0;
            for (f, &v) in row.iter().enumerate() {
                let gr = &mut gw[f * NUM_STAGES..(f + 1) * NUM_STAGES];
                for (g, &dk) in gr.iter_mut().zip(&p) {
                    *g += v * dk;
                }
            }
            for (g, &dk) in gb.iter_mut().zip(&p) {
                *g += dk;
            }
        }
        for (g, &w) in gw.iter_mut().zip(&self.w) {
            *g = *g / n + self.l2 * w;
        }
        for g in gb.iter_mut() {
            *g /= n;
        }
        (gw, gb)
    }
}

/// Fits by gradient descent: a step is accepted only if the loss does not
/// increase; otherwise the step size is halved and the step retried.
/// Stops when the loss improvement falls below 1e-7 or `max_iters` is hit.
/// Returns the model and the accepted-loss trace.
pub fn logreg_fit(
    x: &Array2<f64>,
    labels: &[SleepStage],
    l2: f64,
    max_iters: usize,
) -> Result<(LogRegModel, Vec<f64>)> {
    if x.nrows() == 0 {
        return Err(Error::Fit("logistic regression needs at least one row".into()));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows vs {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let mut model = LogRegModel::zeros(x.ncols(), l2);
    let mut step = 1.0f64;
    let mut loss = model.loss(x, labels);
    let mut trace = vec![loss];

    for _ in 0..max_iters {
        let (gw, gb) = model.gradient(x, labels);
        loop {
            let mut candidate = model.clone();
            for (w, &g) in candidate.w.iter_mut().zip(&gw) {
                *w -= step * g;
            }
            for (b, &g) in candidate.b.iter_mut().zip(&gb) {
                *b -= step * g;
            }
            let new_loss = candidate.loss(x, labels);
            if new_loss <= loss {
                model = candidate;
                let delta = loss - new_loss;
                loss = new_loss;
                trace.push(loss);
                if delta < 1e-7 {
                    return Ok((model, trace));
                }
                break;
            }
            step /= 2.0;
            if step < 1e-12 {
                return Ok((model, trace));
            }
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stages(codes: &[usize]) -> Vec<SleepStage> {
        codes.iter().map(|&c| SleepStage::from_code(c).unwrap()).collect()
    }

    #[test]
    fn zero_model_predicts_uniformly() {
        let model = LogRegModel::zeros(3, 0.0);
        let p = model.predict_proba(&[0.4, 0.1, 0.9]);
        for v in p {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let x = array![
            [0.9, 0.1],
            [0.8, 0.2],
            [0.95, 0.05],
            [0.1, 0.9],
            [0.2, 0.8],
            [0.05, 0.95],
        ];
        let labels = stages(&[0, 0, 0, 3, 3, 3]);
        let (model, _) = logreg_fit(&x, &labels, 0.0, 500).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = x.row(i).to_vec();
            assert_eq!(model.predict(&row), labels[i], "row {i}");
        }
    }

    #[test]
    fn accepted_losses_never_increase() {
        let x = array![
            [0.5, 0.3],
            [0.1, 0.8],
            [0.9, 0.2],
            [0.4, 0.4],
            [0.3, 0.9],
            [0.7, 0.1],
        ];
        let labels = stages(&[0, 1, 2, 3, 4, 0]);
        let (_, trace) = logreg_fit(&x, &labels, 0.01, 200).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn decision_is_invariant_to_constant_score_shift() {
        let x = array![[0.2, 0.7], [0.9, 0.3], [0.5, 0.5]];
        let labels = stages(&[0, 2, 4]);
        let (mut model, _) = logreg_fit(&x, &labels, 0.01, 100).unwrap();
        let base: Vec<_> = (0..3).map(|i| model.predict_proba(&x.row(i).to_vec())).collect();
        for b in model.b.iter_mut() {
            *b += 11.0;
        }
        for (i, expect) in base.iter().enumerate() {
            let p = model.predict_proba(&x.row(i).to_vec());
            for (a, e) in p.iter().zip(expect) {
                assert!((a - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_labels_rejected() {
        let x = array![[0.1], [0.2]];
        assert!(matches!(
            logreg_fit(&x, &stages(&[0]), 0.0, 10),
            Err(Error::Shape(_))
        ));
    }
}
