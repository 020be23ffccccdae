//! Adam optimizer and the CNN training loop.
//!
//! One optimizer step per recording: the batch gradient is the mean
//! cross-entropy gradient over that recording's epochs. Epochs inside a batch
//! are processed in fixed-size chunks that may run on worker threads; chunk
//! results are reduced in a fixed order, so training is bit-deterministic for
//! a given seed regardless of thread count.

use super::{cross_entropy_class, CnnConfig, CnnModel};
use crate::error::{Error, Result};
use crate::types::Recording;
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

const BATCH_CHUNK: usize = 8;

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u32,
}

impl<T: Float> Adam<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let b1 = T::from(0.9).unwrap();
        let b2 = T::from(0.999).unwrap();
        let eps = T::from(1e-8).unwrap();
        let one = T::one();
        let bc1 = one - b1.powi(self.t as i32);
        let bc2 = one - b2.powi(self.t as i32);
        let lr = T::from(lr).unwrap();
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Mean loss and batch gradient over one recording's epochs.
///
/// Returns `(mean_loss, grad)` with the gradient already scaled by `1/N`.
pub(crate) fn recording_gradient<T: Float + Send + Sync>(
    model: &CnnModel<T>,
    rec: &Recording,
) -> Result<(f64, Vec<T>)> {
    let labels = rec
        .labels()
        .ok_or_else(|| Error::Fit("training recording has no labels".into()))?;
    let n = rec.len();
    let n_params = model.params().len();

    let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, labels[i].code())).collect();
    let partials: Vec<(Vec<T>, f64)> = pairs
        .par_chunks(BATCH_CHUNK)
        .map(|chunk| {
            let mut grad = vec![T::zero(); n_params];
            let mut loss = 0.0f64;
            for &(i, y) in chunk {
                let input = model.epoch_input(&rec.epochs()[i]);
                let trace = model.forward_trace(&input);
                loss += cross_entropy_class(y, &trace.probs).to_f64().unwrap();
                model.backward(&input, &trace, y, &mut grad);
            }
            (grad, loss)
        })
        .collect();

    let mut grad = vec![T::zero(); n_params];
    let mut loss_sum = 0.0;
    for (g, l) in partials {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a = *a + *b;
        }
        loss_sum += l;
    }
    let scale = T::from(1.0 / n as f64).unwrap();
    for g in grad.iter_mut() {
        *g = *g * scale;
    }
    Ok((loss_sum / n as f64, grad))
}

/// Trains a CNN on labeled recordings, one Adam step per recording per
/// training epoch. Returns the model and the per-epoch mean loss trace.
pub fn train(cfg: &CnnConfig, recordings: &[&Recording]) -> Result<(CnnModel<f32>, Vec<f64>)> {
    if recordings.is_empty() {
        return Err(Error::Fit("training split is empty".into()));
    }
    for r in recordings {
        if r.labels().is_none() {
            return Err(Error::Fit("training recording has no labels".into()));
        }
        if r.is_empty() {
            return Err(Error::Fit("training recording has no epochs".into()));
        }
    }

    let mut model: CnnModel<f32> = CnnModel::new(cfg.clone())?;
    let mut adam = Adam::new(model.params().len());
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..recordings.len()).collect();
    let mut trace = Vec::with_capacity(cfg.train_epochs);

    for sweep in 0..cfg.train_epochs {
        let lr = if sweep >= cfg.lr_decay_after {
            cfg.lr / cfg.lr_decay_factor
        } else {
            cfg.lr
        };
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut epoch_count = 0usize;
        for &ri in &order {
            let rec = recordings[ri];
            let (mean_loss, grad) = recording_gradient(&model, rec)?;
            if !mean_loss.is_finite() {
                return Err(Error::Numerics(format!(
                    "loss became non-finite at training epoch {sweep}"
                )));
            }
            adam.step(model.params_mut(), &grad, lr);
            loss_sum += mean_loss * rec.len() as f64;
            epoch_count += rec.len();
        }
        trace.push(loss_sum / epoch_count as f64);
    }
    Ok((model, trace))
}
