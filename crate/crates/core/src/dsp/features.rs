//! Per-epoch feature extraction: the inputs every expert rule is built on.

use super::events::{paired_duration, slow_wave_intervals, spindle_intervals, EventDuration};
use super::filter::BandPass;
use super::welch::WelchEstimator;
use crate::stats::percentile_sorted;
use crate::types::{ChannelId, ChannelPair, Epoch, NUM_CHANNELS, SAMPLE_RATE_HZ};
use serde::{Deserialize, Serialize};

/// Number of frequency bands.
pub const NUM_BANDS: usize = 4;
/// Band edges in Hz: delta, theta, alpha, beta.
pub const BAND_EDGES: [(f64, f64); NUM_BANDS] =
    [(0.5, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 35.0)];
pub const BAND_NAMES: [&str; NUM_BANDS] = ["Delta", "Theta", "Alpha", "Beta"];

/// All scalar and event features of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochFeatures {
    /// Band power in uV^2 per (channel, band).
    pub band_power: [[f64; NUM_BANDS]; NUM_CHANNELS],
    /// Robust peak-to-peak amplitude in uV per channel.
    pub amplitude: [f64; NUM_CHANNELS],
    /// Fisher excess kurtosis per channel.
    pub kurtosis: [f64; NUM_CHANNELS],
    /// Summed spindle seconds per pair (F3F4, C3C4, O1O2).
    pub spindle_sec: [f64; 3],
    /// Summed slow-wave seconds per pair.
    pub sws_sec: [f64; 3],
}

/// Extractor bundling the Welch estimator and band-pass filters so repeated
/// calls reuse FFT plans and filter designs.
pub struct FeatureExtractor {
    welch: WelchEstimator,
    bp_wide: BandPass,
    bp_sigma: BandPass,
    bp_delta: BandPass,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureExtractor {
    pub fn new() -> Self {
        let pad = SAMPLE_RATE_HZ as usize; // 1 s reflect padding
        Self {
            welch: WelchEstimator::new(SAMPLE_RATE_HZ),
            bp_wide: BandPass::butterworth(0.3, 35.0, SAMPLE_RATE_HZ, pad),
            bp_sigma: BandPass::butterworth(11.0, 16.0, SAMPLE_RATE_HZ, pad),
            bp_delta: BandPass::butterworth(0.3, 2.0, SAMPLE_RATE_HZ, pad),
        }
    }

    fn channel_f64(epoch: &Epoch, ch: ChannelId) -> Vec<f64> {
        epoch.channel(ch).iter().map(|&v| v as f64).collect()
    }

    /// Welch band power per (channel, band).
    pub fn band_power(&self, epoch: &Epoch) -> [[f64; NUM_BANDS]; NUM_CHANNELS] {
        let mut out = [[0.0; NUM_BANDS]; NUM_CHANNELS];
        for ch in ChannelId::ALL {
            let x = Self::channel_f64(epoch, ch);
            let psd = self.welch.psd(&x);
            for (b, (lo, hi)) in BAND_EDGES.iter().enumerate() {
                out[ch.row()][b] = psd.band_power(*lo, *hi);
            }
        }
        out
    }

    /// Robust peak-to-peak per channel: 99.5th minus 0.5th percentile after a
    /// 0.3-35 Hz band-pass.
    pub fn amplitude(&self, epoch: &Epoch) -> [f64; NUM_CHANNELS] {
        let mut out = [0.0; NUM_CHANNELS];
        for ch in ChannelId::ALL {
            let x = Self::channel_f64(epoch, ch);
            let y = self.bp_wide.filtfilt(&x);
            let mut sorted = y;
            sorted.sort_unstable_by(f64::total_cmp);
            out[ch.row()] = percentile_sorted(&sorted, 99.5) - percentile_sorted(&sorted, 0.5);
        }
        out
    }

    /// Fisher excess kurtosis of the raw samples; zero-variance channels
    /// return 0 by convention.
    pub fn kurtosis(&self, epoch: &Epoch) -> [f64; NUM_CHANNELS] {
        let mut out = [0.0; NUM_CHANNELS];
        for ch in ChannelId::ALL {
            let x = Self::channel_f64(epoch, ch);
            out[ch.row()] = excess_kurtosis(&x);
        }
        out
    }

    /// Overlapping spindle duration for one contralateral pair.
    pub fn detect_spindles(&self, epoch: &Epoch, pair: ChannelPair) -> EventDuration {
        let (a, b) = pair.channels();
        let ia = spindle_intervals(&self.bp_sigma, &Self::channel_f64(epoch, a));
        let ib = spindle_intervals(&self.bp_sigma, &Self::channel_f64(epoch, b));
        paired_duration(&ia, &ib)
    }

    /// Overlapping slow-wave duration for one contralateral pair.
    pub fn detect_slow_waves(&self, epoch: &Epoch, pair: ChannelPair) -> EventDuration {
        let (a, b) = pair.channels();
        let ia = slow_wave_intervals(&self.bp_delta, &Self::channel_f64(epoch, a));
        let ib = slow_wave_intervals(&self.bp_delta, &Self::channel_f64(epoch, b));
        paired_duration(&ia, &ib)
    }

    /// Extracts every feature of one epoch. Pure and deterministic.
    pub fn extract(&self, epoch: &Epoch) -> EpochFeatures {
        let mut spindle_sec = [0.0; 3];
        let mut sws_sec = [0.0; 3];
        for pair in ChannelPair::ALL {
            spindle_sec[pair.index()] = self.detect_spindles(epoch, pair).total_seconds;
            sws_sec[pair.index()] = self.detect_slow_waves(epoch, pair).total_seconds;
        }
        EpochFeatures {
            band_power: self.band_power(epoch),
            amplitude: self.amplitude(epoch),
            kurtosis: self.kurtosis(epoch),
            spindle_sec,
            sws_sec,
        }
    }
}

fn excess_kurtosis(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}
