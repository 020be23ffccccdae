//! Trainable 1-D CNN producing nonnegative epoch embeddings.
//!
//! Three valid (no-padding) convolution layers, each followed by ReLU and
//! non-overlapping max pooling, then one fully-connected softmax head. The
//! flattened output of the last pooling stage is the epoch embedding; the
//! head is only used for training and for the CNN baseline classifier.
//!
//! Parameters live in one flat buffer in layer order (conv1 weights, conv1
//! biases, conv2 weights, ... , fc weights, fc biases), which keeps the
//! optimizer, checkpointing and finite-difference checks simple.

mod checkpoint;
mod ops;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{train, Adam};

use crate::error::{Error, Result};
use crate::types::{Epoch, Recording, NUM_CHANNELS, NUM_STAGES, SAMPLES_PER_EPOCH};
use ndarray::Array2;
use num_traits::Float;
use ops::{conv_forward, relu_pool_forward, softmax};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Flattened embedding width of the full-size architecture.
pub const FULL_EMBEDDING_DIM: usize = 2496;

/// Fixed scaling applied to microvolt samples at the network input; keeps
/// early-layer activations and the softmax in a numerically comfortable
/// range under He initialization.
pub const INPUT_SCALE: f32 = 0.01;

/// One convolution layer: valid convolution with `stride`, then ReLU and
/// non-overlapping max pooling of width `pool`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
}

/// CNN architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub conv: Vec<ConvLayerSpec>,
    pub input_ch: usize,
    pub input_len: usize,
    pub n_classes: usize,
    pub lr: f64,
    /// Learning rate is divided by this factor once, after `lr_decay_after`
    /// training epochs.
    pub lr_decay_factor: f64,
    pub lr_decay_after: usize,
    pub train_epochs: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl CnnConfig {
    /// Full-size architecture: kernel 201 over one second of signal, widths
    /// 32/64/96, flattening to exactly 2,496 dimensions.
    pub fn full() -> Self {
        Self {
            conv: vec![
                ConvLayerSpec { in_ch: 9, out_ch: 32, kernel: 201, stride: 1, pool: 8 },
                ConvLayerSpec { in_ch: 32, out_ch: 64, kernel: 11, stride: 1, pool: 5 },
                ConvLayerSpec { in_ch: 64, out_ch: 96, kernel: 14, stride: 1, pool: 5 },
            ],
            input_ch: NUM_CHANNELS,
            input_len: SAMPLES_PER_EPOCH,
            n_classes: NUM_STAGES,
            lr: 1e-4,
            lr_decay_factor: 10.0,
            lr_decay_after: 10,
            train_epochs: 40,
            seed: 0,
        }
    }

    /// Reduced-width desk profile: same kernel-201 front end with a stride,
    /// narrow channels, fewer training epochs and a larger initial learning
    /// rate. Trades the 2,496-dim flatten constraint for CPU runtime.
    pub fn reduced() -> Self {
        Self {
            conv: vec![
                ConvLayerSpec { in_ch: 9, out_ch: 4, kernel: 201, stride: 8, pool: 5 },
                ConvLayerSpec { in_ch: 4, out_ch: 8, kernel: 11, stride: 1, pool: 5 },
                ConvLayerSpec { in_ch: 8, out_ch: 12, kernel: 14, stride: 1, pool: 2 },
            ],
            input_ch: NUM_CHANNELS,
            input_len: SAMPLES_PER_EPOCH,
            n_classes: NUM_STAGES,
            lr: 1e-3,
            lr_decay_factor: 10.0,
            lr_decay_after: 10,
            train_epochs: 14,
            seed: 0,
        }
    }

    /// Tiny 9 x 200 fixture so finite-difference checks run in milliseconds.
    pub fn micro() -> Self {
        Self {
            conv: vec![
                ConvLayerSpec { in_ch: 9, out_ch: 2, kernel: 21, stride: 1, pool: 2 },
                ConvLayerSpec { in_ch: 2, out_ch: 3, kernel: 11, stride: 1, pool: 2 },
                ConvLayerSpec { in_ch: 3, out_ch: 4, kernel: 14, stride: 1, pool: 2 },
            ],
            input_ch: NUM_CHANNELS,
            input_len: 200,
            n_classes: NUM_STAGES,
            lr: 1e-3,
            lr_decay_factor: 10.0,
            lr_decay_after: 10,
            train_epochs: 40,
            seed: 0,
        }
    }

    /// Geometry of each layer: (conv output length, pool output length).
    pub fn layer_lengths(&self) -> Result<Vec<(usize, usize)>> {
        let mut len = self.input_len;
        let mut ch = self.input_ch;
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, l) in self.conv.iter().enumerate() {
            if l.in_ch != ch {
                return Err(Error::Shape(format!(
                    "layer {i}: expects {} input channels, previous stage has {ch}",
                    l.in_ch
                )));
            }
            if l.kernel == 0 || l.kernel > len || l.stride == 0 || l.pool == 0 {
                return Err(Error::Shape(format!("layer {i}: invalid kernel/stride/pool")));
            }
            let conv_len = (len - l.kernel) / l.stride + 1;
            let pool_len = conv_len / l.pool;
            if pool_len == 0 {
                return Err(Error::Shape(format!("layer {i}: pooling exhausts the signal")));
            }
            out.push((conv_len, pool_len));
            len = pool_len;
            ch = l.out_ch;
        }
        Ok(out)
    }

    /// Flattened embedding width.
    pub fn flatten_dim(&self) -> Result<usize> {
        let lengths = self.layer_lengths()?;
        let last = self.conv.last().ok_or_else(|| Error::Shape("no conv layers".into()))?;
        Ok(last.out_ch * lengths.last().unwrap().1)
    }
}

/// Offsets of each tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
struct ParamLayout {
    conv_w: Vec<(usize, usize)>,
    conv_b: Vec<(usize, usize)>,
    fc_w: (usize, usize),
    fc_b: (usize, usize),
    total: usize,
}

impl ParamLayout {
    fn build(cfg: &CnnConfig) -> Result<Self> {
        let flatten = cfg.flatten_dim()?;
        let mut off = 0;
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for l in &cfg.conv {
            let wlen = l.out_ch * l.in_ch * l.kernel;
            conv_w.push((off, wlen));
            off += wlen;
            conv_b.push((off, l.out_ch));
            off += l.out_ch;
        }
        let fc_w = (off, flatten * cfg.n_classes);
        off += fc_w.1;
        let fc_b = (off, cfg.n_classes);
        off += fc_b.1;
        Ok(Self { conv_w, conv_b, fc_w, fc_b, total: off })
    }
}

/// Intermediate activations of one forward pass, kept for backpropagation.
pub struct ForwardTrace<T> {
    pool_out: Vec<Vec<T>>,
    argmax: Vec<Vec<usize>>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Float> ForwardTrace<T> {
    /// The flattened embedding (last pooled activation map).
    pub fn embedding(&self) -> &[T] {
        self.pool_out.last().expect("at least one layer")
    }
}

/// The CNN with parameters in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T: Float = f32> {
    cfg: CnnConfig,
    layout: ParamLayout,
    params: Vec<T>,
}

impl<T: Float + Send + Sync> CnnModel<T> {
    /// Builds a model with seeded He-uniform weights and zero biases.
    pub fn new(cfg: CnnConfig) -> Result<Self> {
        let layout = ParamLayout::build(&cfg)?;
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let flatten = cfg.flatten_dim()?;
        for (i, l) in cfg.conv.iter().enumerate() {
            let limit = (6.0 / (l.in_ch * l.kernel) as f64).sqrt();
            let (off, len) = layout.conv_w[i];
            for p in params[off..off + len].iter_mut() {
                *p = T::from(rng.gen_range(-limit..limit)).unwrap();
            }
        }
        let limit = (6.0 / flatten as f64).sqrt();
        let (off, len) = layout.fc_w;
        for p in params[off..off + len].iter_mut() {
            *p = T::from(rng.gen_range(-limit..limit)).unwrap();
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.flatten_dim().expect("validated at construction")
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Builds a model from an existing parameter buffer (checkpoint loading).
    pub fn from_params(cfg: CnnConfig, params: Vec<T>) -> Result<Self> {
        let layout = ParamLayout::build(&cfg)?;
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "parameter buffer has {} values, architecture needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self { cfg, layout, params })
    }

    fn slice(&self, range: (usize, usize)) -> &[T] {
        &self.params[range.0..range.0 + range.1]
    }

    /// Converts epoch samples to the model's scalar type, channel-major,
    /// applying [`INPUT_SCALE`].
    pub fn epoch_input(&self, epoch: &Epoch) -> Vec<T> {
        epoch
            .samples()
            .iter()
            .map(|&v| T::from(v * INPUT_SCALE).unwrap())
            .collect()
    }

    /// Full forward pass keeping intermediates for backpropagation.
    pub fn forward_trace(&self, input: &[T]) -> ForwardTrace<T> {
        debug_assert_eq!(input.len(), self.cfg.input_ch * self.cfg.input_len);
        let lengths = self.cfg.layer_lengths().expect("validated at construction");

        let mut pool_out: Vec<Vec<T>> = Vec::with_capacity(self.cfg.conv.len());
        let mut argmax: Vec<Vec<usize>> = Vec::with_capacity(self.cfg.conv.len());

        let mut in_len = self.cfg.input_len;
        for (i, l) in self.cfg.conv.iter().enumerate() {
            let (conv_len, pool_len) = lengths[i];
            let x: &[T] = if i == 0 { input } else { &pool_out[i - 1] };
            let mut pre = vec![T::zero(); l.out_ch * conv_len];
            conv_forward(
                x,
                self.slice(self.layout.conv_w[i]),
                self.slice(self.layout.conv_b[i]),
                &mut pre,
                l.in_ch,
                in_len,
                l.kernel,
                l.stride,
            );
            let mut pooled = vec![T::zero(); l.out_ch * pool_len];
            let mut arg = vec![0usize; l.out_ch * pool_len];
            relu_pool_forward(&pre, l.out_ch, conv_len, l.pool, &mut pooled, &mut arg);
            pool_out.push(pooled);
            argmax.push(arg);
            in_len = pool_len;
        }

        let h = pool_out.last().unwrap();
        let (fw, fb) = (self.slice(self.layout.fc_w), self.slice(self.layout.fc_b));
        let c = self.cfg.n_classes;
        let mut logits = fb.to_vec();
        for (f, &hv) in h.iter().enumerate() {
            let row = &fw[f * c..(f + 1) * c];
            for (z, &w) in logits.iter_mut().zip(row) {
                *z = *z + w * hv;
            }
        }
        let probs = softmax(&logits);
        ForwardTrace { pool_out, argmax, logits, probs }
    }

    /// Embedding and stage probabilities for one epoch.
    ///
    /// The embedding is nonnegative elementwise; the probabilities sum to 1.
    pub fn forward(&self, epoch: &Epoch) -> Result<(Vec<T>, Vec<T>)> {
        let input = self.epoch_input(epoch);
        let trace = self.forward_trace(&input);
        if !trace.embedding().iter().all(|v| v.is_finite())
            || !trace.probs.iter().all(|v| v.is_finite())
        {
            return Err(Error::Numerics(format!(
                "non-finite activation in forward pass of epoch {}",
                epoch.index()
            )));
        }
        Ok((trace.embedding().to_vec(), trace.probs.clone()))
    }

    /// Backpropagation for one epoch; accumulates into `grad` (same layout as
    /// the parameter buffer).
    pub fn backward(&self, input: &[T], trace: &ForwardTrace<T>, label: usize, grad: &mut [T]) {
        debug_assert_eq!(grad.len(), self.layout.total);
        let lengths = self.cfg.layer_lengths().expect("validated at construction");
        let c = self.cfg.n_classes;

        // Softmax + cross-entropy head.
        let mut dlogits = trace.probs.clone();
        dlogits[label] = dlogits[label] - T::one();

        let h = trace.pool_out.last().unwrap();
        let flatten = h.len();
        let (fw_off, _) = self.layout.fc_w;
        let (fb_off, _) = self.layout.fc_b;
        let mut dh = vec![T::zero(); flatten];
        {
            let fw = self.slice(self.layout.fc_w);
            for (f, &hv) in h.iter().enumerate() {
                let row = &fw[f * c..(f + 1) * c];
                let grow = &mut grad[fw_off + f * c..fw_off + (f + 1) * c];
                let mut acc = T::zero();
                for ((g, &w), &dz) in grow.iter_mut().zip(row).zip(&dlogits) {
                    *g = *g + hv * dz;
                    acc = acc + w * dz;
                }
                dh[f] = acc;
            }
            for (g, &dz) in grad[fb_off..fb_off + c].iter_mut().zip(&dlogits) {
                *g = *g + dz;
            }
        }

        // Walk the conv stack backwards.
        let mut dpool = dh;
        for i in (0..self.cfg.conv.len()).rev() {
            let l = self.cfg.conv[i];
            let (conv_len, _) = lengths[i];
            let in_len = if i == 0 { self.cfg.input_len } else { lengths[i - 1].1 };
            let x: &[T] = if i == 0 { input } else { &trace.pool_out[i - 1] };

            let mut dpre = vec![T::zero(); l.out_ch * conv_len];
            ops::relu_pool_backward(&dpool, &trace.argmax[i], &mut dpre);

            let mut dx = if i == 0 {
                None
            } else {
                Some(vec![T::zero(); l.in_ch * in_len])
            };
            let (w_off, w_len) = self.layout.conv_w[i];
            let (b_off, b_len) = self.layout.conv_b[i];
            // Split-borrow the grad buffer around the two tensors.
            let (dw, db) = {
                let (head, tail) = grad.split_at_mut(b_off);
                (&mut head[w_off..w_off + w_len], &mut tail[..b_len])
            };
            ops::conv_backward(
                x,
                self.slice(self.layout.conv_w[i]),
                &dpre,
                dw,
                db,
                dx.as_deref_mut(),
                l.in_ch,
                in_len,
                l.kernel,
                l.stride,
            );
            if let Some(dx) = dx {
                dpool = dx;
            }
        }
    }
}

/// Cross-entropy between a one-hot label and a probability vector, with the
/// probability clamped at 1e-12.
pub fn cross_entropy<T: Float>(y_one_hot: &[T], s: &[T]) -> T {
    debug_assert_eq!(y_one_hot.len(), s.len());
    let floor = T::from(1e-12).unwrap();
    let mut loss = T::zero();
    for (&y, &p) in y_one_hot.iter().zip(s) {
        if y > T::zero() {
            loss = loss - y * p.max(floor).ln();
        }
    }
    loss
}

/// Cross-entropy against a class index.
pub fn cross_entropy_class<T: Float>(label: usize, s: &[T]) -> T {
    let floor = T::from(1e-12).unwrap();
    -s[label].max(floor).ln()
}

/// Nonnegative epoch embeddings, one row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub matrix: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if !matrix.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Numerics(
                "embeddings must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn n_epochs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Embeds every epoch of the given recordings, preserving order.
pub fn embed_all(model: &CnnModel<f32>, recordings: &[&Recording]) -> Result<EmbeddingMatrix> {
    use rayon::prelude::*;
    let epochs: Vec<&Epoch> = recordings.iter().flat_map(|r| r.epochs().iter()).collect();
    let dim = model.embedding_dim();
    let rows: Vec<Vec<f32>> = epochs
        .par_iter()
        .map(|e| {
            let input = model.epoch_input(e);
            let trace = model.forward_trace(&input);
            trace.embedding().to_vec()
        })
        .collect();
    let mut matrix = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            matrix[[i, j]] = v as f64;
        }
    }
    EmbeddingMatrix::new(matrix)
}
