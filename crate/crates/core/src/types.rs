//! Shared domain types: stages, channels, epochs, recordings, subject splits.

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Number of sleep stages.
pub const NUM_STAGES: usize = 5;
/// Number of PSG channels per epoch.
pub const NUM_CHANNELS: usize = 9;
/// Samples per channel in one 30-second epoch at 200 Hz.
pub const SAMPLES_PER_EPOCH: usize = 6000;
/// Sampling frequency in Hz.
pub const SAMPLE_RATE_HZ: f64 = 200.0;
/// Epoch duration in seconds.
pub const EPOCH_SECONDS: f64 = 30.0;

/// The five sleep stages, with canonical integer codes 0..4 in this order.
///
/// All probability vectors and confusion matrices in the crate follow this
/// order: `[Wake, N1, N2, N3, Rem]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SleepStage {
    Wake,
    N1,
    N2,
    N3,
    Rem,
}

impl SleepStage {
    pub const ALL: [SleepStage; NUM_STAGES] = [
        SleepStage::Wake,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::Rem,
    ];

    /// Canonical integer code (0..4).
    pub fn code(self) -> usize {
        self as usize
    }

    /// Inverse of [`SleepStage::code`].
    pub fn from_code(code: usize) -> Result<Self> {
        Self::ALL
            .get(code)
            .copied()
            .ok_or_else(|| Error::State(format!("invalid sleep stage code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::Wake => "Wake",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::Rem => "REM",
        }
    }
}

/// The nine PSG channels, in fixed epoch row order 0..8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelId {
    F3,
    F4,
    C3,
    C4,
    O1,
    O2,
    E1,
    E2,
    ChinEmg,
}

impl ChannelId {
    pub const ALL: [ChannelId; NUM_CHANNELS] = [
        ChannelId::F3,
        ChannelId::F4,
        ChannelId::C3,
        ChannelId::C4,
        ChannelId::O1,
        ChannelId::O2,
        ChannelId::E1,
        ChannelId::E2,
        ChannelId::ChinEmg,
    ];

    /// Epoch row index of this channel.
    pub fn row(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelId::F3 => "F3",
            ChannelId::F4 => "F4",
            ChannelId::C3 => "C3",
            ChannelId::C4 => "C4",
            ChannelId::O1 => "O1",
            ChannelId::O2 => "O2",
            ChannelId::E1 => "E1",
            ChannelId::E2 => "E2",
            ChannelId::ChinEmg => "ChinEMG",
        }
    }
}

/// Contralateral channel pairs used by event detectors (spindles, slow waves).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelPair {
    F3F4,
    C3C4,
    O1O2,
}

impl ChannelPair {
    pub const ALL: [ChannelPair; 3] = [ChannelPair::F3F4, ChannelPair::C3C4, ChannelPair::O1O2];

    pub fn channels(self) -> (ChannelId, ChannelId) {
        match self {
            ChannelPair::F3F4 => (ChannelId::F3, ChannelId::F4),
            ChannelPair::C3C4 => (ChannelId::C3, ChannelId::C4),
            ChannelPair::O1O2 => (ChannelId::O1, ChannelId::O2),
        }
    }

    /// Index of this pair in feature vectors (0..3).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelPair::F3F4 => "F3&F4",
            ChannelPair::C3C4 => "C3&C4",
            ChannelPair::O1O2 => "O1&O2",
        }
    }
}

/// One 30-second, 9-channel, 200 Hz signal matrix: the atomic scoring unit.
///
/// Samples are microvolt values stored row-major, one row per [`ChannelId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    samples: Array2<f32>,
    subject_id: String,
    index: usize,
}

impl Epoch {
    /// Builds an epoch, validating shape (9 x 6000) and sample finiteness.
    pub fn new(samples: Array2<f32>, subject_id: impl Into<String>, index: usize) -> Result<Self> {
        if samples.shape() != [NUM_CHANNELS, SAMPLES_PER_EPOCH] {
            return Err(Error::Shape(format!(
                "epoch must be {NUM_CHANNELS}x{SAMPLES_PER_EPOCH}, got {:?}",
                samples.shape()
            )));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerics("epoch contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            subject_id: subject_id.into(),
            index,
        })
    }

    pub fn samples(&self) -> &Array2<f32> {
        &self.samples
    }

    /// Contiguous sample slice for one channel.
    pub fn channel(&self, ch: ChannelId) -> &[f32] {
        self.samples
            .row(ch.row())
            .to_slice()
            .expect("epoch rows are contiguous")
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

/// An ordered sequence of epochs from one subject, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    epochs: Vec<Epoch>,
    labels: Option<Vec<SleepStage>>,
}

impl Recording {
    pub fn new(epochs: Vec<Epoch>, labels: Option<Vec<SleepStage>>) -> Result<Self> {
        if let Some(labels) = &labels {
            if labels.len() != epochs.len() {
                return Err(Error::Shape(format!(
                    "{} labels for {} epochs",
                    labels.len(),
                    epochs.len()
                )));
            }
        }
        for (i, e) in epochs.iter().enumerate() {
            if e.index() != i {
                return Err(Error::State(format!(
                    "epoch index {} at position {i}; indices must be 0..N-1 contiguous",
                    e.index()
                )));
            }
        }
        Ok(Self { epochs, labels })
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn labels(&self) -> Option<&[SleepStage]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Subject id of the recording (taken from its first epoch).
    pub fn subject_id(&self) -> Option<&str> {
        self.epochs.first().map(|e| e.subject_id())
    }
}

/// A by-subject train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn is_test_subject(&self, subject_id: &str) -> bool {
        self.test.iter().any(|s| s == subject_id)
    }
}

/// Randomly partitions subjects into train/test sets.
///
/// The split is by subject, never by epoch. `|test|` is `test_fraction * n`
/// rounded half-up, clamped to `[1, n-1]`. Deterministic for a fixed seed.
pub fn split_by_subject(
    recordings: &[Recording],
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut subjects: Vec<String> = Vec::new();
    for rec in recordings {
        if let Some(id) = rec.subject_id() {
            if !subjects.iter().any(|s| s == id) {
                subjects.push(id.to_string());
            }
        }
    }
    if subjects.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 distinct subjects, got {}",
            subjects.len()
        )));
    }
    let n = subjects.len();
    let n_test = ((test_fraction * n as f64 + 0.5).floor() as usize).clamp(1, n - 1);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut shuffled = subjects;
    shuffled.shuffle(&mut rng);

    let test: Vec<String> = shuffled[..n_test].to_vec();
    let train: Vec<String> = shuffled[n_test..].to_vec();
    Ok(DatasetSplit { train, test, seed })
}
