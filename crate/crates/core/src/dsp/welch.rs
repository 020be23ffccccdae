//! Welch power spectral density estimation and band-power integration.
//!
//! PSDs use 2 s Hann segments with 50% overlap (29 segments over a 30 s
//! epoch at 200 Hz) averaged into a one-sided density in uV^2/Hz. Band power
//! is the trapezoid integral of the density over the band.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Segment length in samples for the 2 s Hann window at 200 Hz.
pub const SEGMENT_LEN: usize = 400;

/// One-sided PSD of a single channel.
#[derive(Debug, Clone)]
pub struct Psd {
    /// Density values in uV^2/Hz, bins 0..=SEGMENT_LEN/2.
    pub values: Vec<f64>,
    /// Frequency step between bins in Hz.
    pub freq_step: f64,
}

impl Psd {
    /// Trapezoid integral of the density over `[lo_hz, hi_hz]`.
    ///
    /// Band edges are expected to land on the bin grid; off-grid edges are
    /// snapped to the nearest bin.
    pub fn band_power(&self, lo_hz: f64, hi_hz: f64) -> f64 {
        let lo = (lo_hz / self.freq_step).round() as usize;
        let hi = ((hi_hz / self.freq_step).round() as usize).min(self.values.len() - 1);
        if hi <= lo {
            return 0.0;
        }
        let inner: f64 = self.values[lo + 1..hi].iter().sum();
        self.freq_step * (0.5 * self.values[lo] + inner + 0.5 * self.values[hi])
    }

    /// Integral of the full density from DC to Nyquist (Parseval check).
    pub fn total_power(&self) -> f64 {
        let n = self.values.len();
        let inner: f64 = self.values[1..n - 1].iter().sum();
        self.freq_step * (0.5 * self.values[0] + inner + 0.5 * self.values[n - 1])
    }
}

/// Reusable Welch estimator (caches the FFT plan and window).
pub struct WelchEstimator {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    window_ssq: f64,
    fs: f64,
}

impl WelchEstimator {
    pub fn new(fs: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(SEGMENT_LEN);
        // Periodic Hann window.
        let window: Vec<f64> = (0..SEGMENT_LEN)
            .map(|i| {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / SEGMENT_LEN as f64).cos())
            })
            .collect();
        let window_ssq = window.iter().map(|w| w * w).sum();
        Self {
            fft,
            window,
            window_ssq,
            fs,
        }
    }

    /// Welch PSD: mean of Hann-windowed periodograms over 50%-overlapping
    /// segments. Requires `x.len() >= SEGMENT_LEN`.
    pub fn psd(&self, x: &[f64]) -> Psd {
        let n = SEGMENT_LEN;
        assert!(x.len() >= n, "signal shorter than one Welch segment");
        let hop = n / 2;
        let n_segments = (x.len() - n) / hop + 1;
        let half = n / 2;

        let mut acc = vec![0.0f64; half + 1];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for seg in 0..n_segments {
            let start = seg * hop;
            for i in 0..n {
                buf[i] = Complex64::new(x[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                *a += buf[k].norm_sqr();
            }
        }

        let scale = 1.0 / (self.fs * self.window_ssq * n_segments as f64);
        let mut values: Vec<f64> = acc.iter().map(|a| a * scale).collect();
        // One-sided density: interior bins carry both halves of the spectrum.
        for v in values[1..half].iter_mut() {
            *v *= 2.0;
        }
        Psd {
            values,
            freq_step: self.fs / n as f64,
        }
    }
}
