//! Spindle and slow-wave event detection on contralateral channel pairs.
//!
//! Both detectors work per channel and only credit time where detections on
//! the two channels of a pair overlap, which suppresses single-channel
//! artifacts.

use super::filter::BandPass;
use crate::stats::median;
use crate::types::SAMPLE_RATE_HZ;

/// Summed detected-event duration within one epoch for one channel pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventDuration {
    pub total_seconds: f64,
}

impl EventDuration {
    fn from_samples(samples: usize) -> Self {
        let secs = samples as f64 / SAMPLE_RATE_HZ;
        Self {
            total_seconds: secs.clamp(0.0, 30.0),
        }
    }
}

/// Centered moving RMS with window `win` samples (edges use the available part).
pub(super) fn moving_rms(x: &[f64], win: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    for v in x {
        prefix.push(prefix.last().unwrap() + v * v);
    }
    let half = win / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1) + 1;
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).sqrt()
        })
        .collect()
}

/// Maximal runs where `pred` holds, as half-open `[start, end)` intervals.
fn runs_above(values: &[f64], thr: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (v > thr, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, values.len()));
    }
    out
}

/// Total intersection length of two sorted interval lists, in samples.
fn overlap_samples(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let (mut i, mut j, mut total) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 <= b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Spindle candidates on one channel: 11-16 Hz band, 0.3 s moving RMS above
/// 1.5x the epoch's median sigma-RMS, kept when 0.5-3 s long.
pub(super) fn spindle_intervals(bp_sigma: &BandPass, x: &[f64]) -> Vec<(usize, usize)> {
    let y = bp_sigma.filtfilt(x);
    let rms = moving_rms(&y, (0.3 * SAMPLE_RATE_HZ) as usize);
    let thr = 1.5 * median(&rms);
    let min_len = (0.5 * SAMPLE_RATE_HZ) as usize;
    let max_len = (3.0 * SAMPLE_RATE_HZ) as usize;
    runs_above(&rms, thr)
        .into_iter()
        .filter(|(s, e)| (e - s) >= min_len && (e - s) <= max_len)
        .collect()
}

/// Slow-wave candidates on one channel: 0.3-2 Hz band, negative-then-positive
/// half-wave pairs with negative peak <= -40 uV, peak-to-peak >= 75 uV and
/// duration 0.8-2 s.
pub(super) fn slow_wave_intervals(bp_delta: &BandPass, x: &[f64]) -> Vec<(usize, usize)> {
    let y = bp_delta.filtfilt(x);
    let sign = |v: f64| v >= 0.0;
    let mut crossings = Vec::new();
    for i in 1..y.len() {
        if sign(y[i]) != sign(y[i - 1]) {
            crossings.push(i);
        }
    }

    let min_len = (0.8 * SAMPLE_RATE_HZ) as usize;
    let max_len = (2.0 * SAMPLE_RATE_HZ) as usize;
    let mut out = Vec::new();
    let mut k = 0;
    while k + 2 < crossings.len() {
        let (c0, c1, c2) = (crossings[k], crossings[k + 1], crossings[k + 2]);
        if sign(y[c0]) {
            k += 1;
            continue; // need the negative half-wave first
        }
        let neg_peak = y[c0..c1].iter().copied().fold(f64::INFINITY, f64::min);
        let pos_peak = y[c1..c2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let len = c2 - c0;
        if neg_peak <= -40.0 && pos_peak - neg_peak >= 75.0 && len >= min_len && len <= max_len {
            out.push((c0, c2));
            k += 2;
        } else {
            k += 1;
        }
    }
    out
}

pub(super) fn paired_duration(a: &[(usize, usize)], b: &[(usize, usize)]) -> EventDuration {
    EventDuration::from_samples(overlap_samples(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const FS: f64 = 200.0;
    const N: usize = 6000;

    fn sigma_band() -> BandPass {
        BandPass::butterworth(11.0, 16.0, FS, 200)
    }

    fn delta_band() -> BandPass {
        BandPass::butterworth(0.3, 2.0, FS, 200)
    }

    /// Deterministic weak pink-ish noise (white noise through leaky integrators).
    fn weak_pink(seed: u64, amp: f64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut white = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
        (0..N)
            .map(|_| {
                let w = white();
                b0 = 0.99765 * b0 + w * 0.0990460;
                b1 = 0.96300 * b1 + w * 0.2965164;
                b2 = 0.57000 * b2 + w * 1.0526913;
                amp * (b0 + b1 + b2 + w * 0.1848)
            })
            .collect()
    }

    fn add_burst(x: &mut [f64], start_s: f64, dur_s: f64, freq: f64, amp: f64) {
        let s = (start_s * FS) as usize;
        let e = ((start_s + dur_s) * FS) as usize;
        for i in s..e.min(x.len()) {
            x[i] += amp * (2.0 * PI * freq * i as f64 / FS).sin();
        }
    }

    #[test]
    fn three_spindle_bursts_recovered_on_pair() {
        // Three 1.3 s bursts at 13 Hz, identical on both channels, over weak
        // pink noise: nominal construction total is 3.9 s.
        let mut a = weak_pink(1, 10.0);
        let mut b = weak_pink(4, 10.0);
        for start in [5.0, 12.0, 20.0] {
            add_burst(&mut a, start, 1.3, 13.0, 12.0);
            add_burst(&mut b, start, 1.3, 13.0, 12.0);
        }
        let bp = sigma_band();
        let ia = spindle_intervals(&bp, &a);
        let ib = spindle_intervals(&bp, &b);
        let total = paired_duration(&ia, &ib).total_seconds;
        assert!(
            (3.0..=4.5).contains(&total),
            "spindle total {total} outside [3.0, 4.5]"
        );
    }

    #[test]
    fn burst_on_one_channel_only_yields_near_zero() {
        let mut a = weak_pink(2, 10.0);
        for start in [5.0, 12.0, 20.0] {
            add_burst(&mut a, start, 1.3, 13.0, 12.0);
        }
        let b = weak_pink(3, 10.0);
        let bp = sigma_band();
        let total =
            paired_duration(&spindle_intervals(&bp, &a), &spindle_intervals(&bp, &b)).total_seconds;
        assert!(total < 0.5, "one-sided burst produced {total} s");
    }

    #[test]
    fn zero_epoch_has_no_spindles() {
        let x = vec![0.0; N];
        let bp = sigma_band();
        let total =
            paired_duration(&spindle_intervals(&bp, &x), &spindle_intervals(&bp, &x)).total_seconds;
        assert_eq!(total, 0.0);
    }

    #[test]
    fn full_epoch_slow_wave_covers_most_of_it() {
        let x: Vec<f64> = (0..N)
            .map(|i| 100.0 * (2.0 * PI * 1.0 * i as f64 / FS).sin())
            .collect();
        let bp = delta_band();
        let ia = slow_wave_intervals(&bp, &x);
        let total = paired_duration(&ia, &ia).total_seconds;
        assert!(
            (24.0..=30.0).contains(&total),
            "slow-wave total {total} outside [24, 30]"
        );
    }

    #[test]
    fn low_amplitude_wave_rejected() {
        let x: Vec<f64> = (0..N)
            .map(|i| 20.0 * (2.0 * PI * 1.0 * i as f64 / FS).sin())
            .collect();
        let bp = delta_band();
        let ia = slow_wave_intervals(&bp, &x);
        assert!(ia.is_empty());
    }

    #[test]
    fn slow_wave_needs_both_channels() {
        let x: Vec<f64> = (0..N)
            .map(|i| 100.0 * (2.0 * PI * 1.0 * i as f64 / FS).sin())
            .collect();
        let flat = vec![0.0; N];
        let bp = delta_band();
        let total = paired_duration(&slow_wave_intervals(&bp, &x), &slow_wave_intervals(&bp, &flat))
            .total_seconds;
        assert_eq!(total, 0.0);
    }

    #[test]
    fn moving_rms_of_constant_is_constant() {
        let x = vec![2.0; 100];
        let rms = moving_rms(&x, 10);
        for v in rms {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_samples_counts_intersections() {
        let a = vec![(0usize, 10usize), (20, 30)];
        let b = vec![(5usize, 25usize)];
        assert_eq!(overlap_samples(&a, &b), 5 + 5);
    }
}
