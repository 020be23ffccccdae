//! Labeled synthetic PSG generation.
//!
//! Each stage gets its clinical signature: occipital alpha and muscle tone in
//! Wake, low-amplitude theta in N1, bilateral sigma spindles in N2, frontal
//! and central high-amplitude slow waves in N3, and ocular deflections with
//! muscle atonia in REM. Stage parameters are jittered per epoch so class
//! distributions overlap, and pink background noise is added everywhere.
//! Stage sequences follow a row-stochastic transition matrix.

use crate::error::{Error, Result};
use crate::types::{
    ChannelId, Epoch, Recording, SleepStage, NUM_CHANNELS, NUM_STAGES, SAMPLES_PER_EPOCH,
    SAMPLE_RATE_HZ,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Configuration of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    pub seed: u64,
    /// Pink background noise scale in uV.
    pub noise_scale_uv: f64,
    /// Row-stochastic stage transition matrix in stage-code order.
    pub stage_transition: [[f64; NUM_STAGES]; NUM_STAGES],
}

impl SynthConfig {
    /// Strong self-transition (0.8) mimics hypnogram stage persistence.
    pub fn default_transition() -> [[f64; NUM_STAGES]; NUM_STAGES] {
        let mut m = [[0.05; NUM_STAGES]; NUM_STAGES];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 0.8;
        }
        m
    }

    pub fn new(n_subjects: usize, epochs_per_subject: usize, seed: u64) -> Self {
        Self {
            n_subjects,
            epochs_per_subject,
            seed,
            noise_scale_uv: 8.0,
            stage_transition: Self::default_transition(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.epochs_per_subject == 0 {
            return Err(Error::State("subject and epoch counts must be positive".into()));
        }
        if !(self.noise_scale_uv >= 0.0) {
            return Err(Error::State("noise_scale_uv must be nonnegative".into()));
        }
        for (i, row) in self.stage_transition.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::State(format!(
                    "transition row {i} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::State(format!("transition row {i} has negative entry")));
            }
        }
        Ok(())
    }
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
pub fn stationary_distribution(m: &[[f64; NUM_STAGES]; NUM_STAGES]) -> [f64; NUM_STAGES] {
    let mut pi = [1.0 / NUM_STAGES as f64; NUM_STAGES];
    for _ in 0..10_000 {
        let mut next = [0.0; NUM_STAGES];
        for (i, p) in pi.iter().enumerate() {
            for (j, v) in next.iter_mut().enumerate() {
                *v += p * m[i][j];
            }
        }
        let delta: f64 = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .sum();
        pi = next;
        if delta < 1e-14 {
            break;
        }
    }
    pi
}

/// Paul Kellet's three-pole pink noise approximation.
pub(crate) struct PinkFilter {
    b0: f64,
    b1: f64,
    b2: f64,
}

impl PinkFilter {
    pub(crate) fn new() -> Self {
        Self {
            b0: 0.0,
            b1: 0.0,
            b2: 0.0,
        }
    }

    pub(crate) fn next(&mut self, white: f64) -> f64 {
        self.b0 = 0.99765 * self.b0 + white * 0.0990460;
        self.b1 = 0.96300 * self.b1 + white * 0.2965164;
        self.b2 = 0.57000 * self.b2 + white * 1.0526913;
        self.b0 + self.b1 + self.b2 + white * 0.1848
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Generates `n_subjects` labeled recordings. Deterministic per seed;
/// subjects are generated in parallel from per-subject derived seeds.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    (0..cfg.n_subjects)
        .into_par_iter()
        .map(|s| {
            let subject_seed = splitmix64(cfg.seed ^ splitmix64(s as u64 + 1));
            generate_subject(cfg, s, subject_seed)
        })
        .collect()
}

fn generate_subject(cfg: &SynthConfig, subject: usize, seed: u64) -> Result<Recording> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let subject_id = format!("synth-{subject:04}");

    let pi = stationary_distribution(&cfg.stage_transition);
    let mut stage = sample_discrete(&mut rng, &pi);
    let mut labels = Vec::with_capacity(cfg.epochs_per_subject);
    for _ in 0..cfg.epochs_per_subject {
        labels.push(SleepStage::from_code(stage)?);
        stage = sample_discrete(&mut rng, &cfg.stage_transition[stage]);
    }

    let epochs = labels
        .iter()
        .enumerate()
        .map(|(i, &st)| {
            let m = synth_epoch(st, cfg.noise_scale_uv, &mut rng);
            Epoch::new(m, subject_id.clone(), i)
        })
        .collect::<Result<Vec<_>>>()?;
    Recording::new(epochs, Some(labels))
}

fn sample_discrete(rng: &mut ChaCha20Rng, probs: &[f64; NUM_STAGES]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    NUM_STAGES - 1
}

const N: usize = SAMPLES_PER_EPOCH;
const FS: f64 = SAMPLE_RATE_HZ;

struct EpochCanvas {
    data: Vec<f64>, // 9 x 6000 row-major
}

impl EpochCanvas {
    fn new() -> Self {
        Self {
            data: vec![0.0; NUM_CHANNELS * N],
        }
    }

    fn row_mut(&mut self, ch: ChannelId) -> &mut [f64] {
        let r = ch.row();
        &mut self.data[r * N..(r + 1) * N]
    }

    /// Continuous oscillation over the whole epoch.
    fn add_sine(&mut self, ch: ChannelId, freq: f64, amp: f64, phase: f64) {
        for (i, v) in self.row_mut(ch).iter_mut().enumerate() {
            *v += amp * (2.0 * PI * freq * i as f64 / FS + phase).sin();
        }
    }

    /// Fundamental plus three decaying harmonics. With `phases` locked to
    /// multiples of one offset this is a sawtooth-like wave; with independent
    /// random phases it has the same power spectrum but no coherent shape.
    fn add_harmonic_stack(&mut self, ch: ChannelId, freq: f64, amp: f64, phases: [f64; 4]) {
        const HARMONIC_AMPS: [f64; 4] = [1.0, 0.45, 0.30, 0.15];
        for (i, v) in self.row_mut(ch).iter_mut().enumerate() {
            let t = i as f64 / FS;
            let mut acc = 0.0;
            for (k, (ha, ph)) in HARMONIC_AMPS.iter().zip(phases).enumerate() {
                acc += ha * (2.0 * PI * freq * (k + 1) as f64 * t + ph).sin();
            }
            *v += amp * acc;
        }
    }

    /// Hann-windowed oscillatory burst.
    fn add_burst(&mut self, ch: ChannelId, start_s: f64, dur_s: f64, freq: f64, amp: f64, phase: f64) {
        let s = (start_s * FS) as usize;
        let e = (((start_s + dur_s) * FS) as usize).min(N);
        let len = e.saturating_sub(s);
        if len == 0 {
            return;
        }
        let row = self.row_mut(ch);
        for k in 0..len {
            let w = 0.5 * (1.0 - (2.0 * PI * k as f64 / len as f64).cos());
            row[s + k] += w * amp * (2.0 * PI * freq * (s + k) as f64 / FS + phase).sin();
        }
    }

    /// Half-sine monophasic deflection (eye-movement shape).
    fn add_deflection(&mut self, ch: ChannelId, start_s: f64, dur_s: f64, amp: f64) {
        let s = (start_s * FS) as usize;
        let e = (((start_s + dur_s) * FS) as usize).min(N);
        let len = e.saturating_sub(s);
        if len == 0 {
            return;
        }
        let row = self.row_mut(ch);
        for k in 0..len {
            row[s + k] += amp * (PI * k as f64 / len as f64).sin();
        }
    }

    /// White noise of amplitude `amp` on one channel.
    fn add_white(&mut self, ch: ChannelId, amp: f64, rng: &mut ChaCha20Rng) {
        for v in self.row_mut(ch) {
            *v += amp * rng.gen_range(-1.0..1.0);
        }
    }

    /// Pink background noise on every channel.
    fn add_pink_everywhere(&mut self, scale: f64, rng: &mut ChaCha20Rng) {
        for ch in ChannelId::ALL {
            let mut pink = PinkFilter::new();
            for v in self.row_mut(ch) {
                *v += scale * pink.next(rng.gen_range(-1.0..1.0));
            }
        }
    }

    /// Multiplies a channel group by a common per-epoch gain.
    fn scale_channels(&mut self, chs: &[ChannelId], gain: f64) {
        for &ch in chs {
            for v in self.row_mut(ch) {
                *v *= gain;
            }
        }
    }

    fn into_f32(self) -> Array2<f32> {
        Array2::from_shape_vec(
            (NUM_CHANNELS, N),
            self.data.into_iter().map(|v| v as f32).collect(),
        )
        .expect("canvas has fixed shape")
    }
}

const EEG: [ChannelId; 6] = [
    ChannelId::F3,
    ChannelId::F4,
    ChannelId::C3,
    ChannelId::C4,
    ChannelId::O1,
    ChannelId::O2,
];
const FRONTO_CENTRAL: [ChannelId; 4] = [
    ChannelId::F3,
    ChannelId::F4,
    ChannelId::C3,
    ChannelId::C4,
];

fn synth_epoch(stage: SleepStage, noise_scale: f64, rng: &mut ChaCha20Rng) -> Array2<f32> {
    let mut canvas = EpochCanvas::new();
    match stage {
        SleepStage::Wake => synth_wake(&mut canvas, rng),
        SleepStage::N1 => synth_n1(&mut canvas, rng),
        SleepStage::N2 => synth_n2(&mut canvas, rng),
        SleepStage::N3 => synth_n3(&mut canvas, rng),
        SleepStage::Rem => synth_rem(&mut canvas, rng),
    }
    canvas.add_pink_everywhere(noise_scale, rng);
    // Electrode gain drift: scales absolute amplitudes per epoch without
    // touching waveform shape or cross-channel structure.
    canvas.scale_channels(&EEG, rng.gen_range(0.6..1.5));
    canvas.scale_channels(&[ChannelId::E1, ChannelId::E2], rng.gen_range(0.6..1.5));
    canvas.scale_channels(&[ChannelId::ChinEmg], rng.gen_range(0.6..1.5));
    canvas.into_f32()
}

fn synth_wake(c: &mut EpochCanvas, rng: &mut ChaCha20Rng) {
    let alpha_f = rng.gen_range(8.5..11.5);
    let phase = rng.gen_range(0.0..2.0 * PI);
    // Occipital-dominant alpha; a third of wake epochs are "active wake"
    // with attenuated alpha that overlaps the N1 fragment range.
    let occipital = if rng.gen_bool(0.65) {
        rng.gen_range(12.0..40.0)
    } else {
        rng.gen_range(4.0..10.0)
    };
    for ch in [ChannelId::O1, ChannelId::O2] {
        c.add_sine(ch, alpha_f, occipital * rng.gen_range(0.85..1.0), phase);
    }
    for ch in FRONTO_CENTRAL {
        c.add_sine(ch, alpha_f, occipital * rng.gen_range(0.2..0.45), phase);
    }
    for ch in EEG {
        c.add_sine(ch, rng.gen_range(16.0..28.0), rng.gen_range(4.0..9.0), rng.gen_range(0.0..2.0 * PI));
    }
    c.add_white(ChannelId::ChinEmg, rng.gen_range(6.0..24.0), rng);
    // Blinks: same polarity on both EOG channels.
    for _ in 0..rng.gen_range(0..=2) {
        let start = rng.gen_range(0.0..29.0);
        let dur = rng.gen_range(0.3..0.5);
        let amp = rng.gen_range(40.0..80.0);
        c.add_deflection(ChannelId::E1, start, dur, amp);
        c.add_deflection(ChannelId::E2, start, dur, amp);
    }
}

fn synth_n1(c: &mut EpochCanvas, rng: &mut ChaCha20Rng) {
    // Mixed-frequency drowsy activity: the same harmonic amplitude stack as
    // REM's sawtooth but with independent phases, so the two stages match in
    // band power and differ only in waveform shape.
    let theta_f = rng.gen_range(4.5..7.5);
    let phases: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let amp = rng.gen_range(8.0..20.0);
    for ch in EEG {
        c.add_harmonic_stack(ch, theta_f, amp * rng.gen_range(0.7..1.0), phases);
    }
    if rng.gen_bool(0.35) {
        // Residual alpha fragments in the drowsy range of Wake.
        let start = rng.gen_range(0.0..25.0);
        let ph = rng.gen_range(0.0..2.0 * PI);
        for ch in [ChannelId::O1, ChannelId::O2] {
            c.add_burst(ch, start, rng.gen_range(1.0..3.0), 10.0, rng.gen_range(8.0..18.0), ph);
        }
    }
    if rng.gen_bool(0.2) {
        // Spindle intrusion near the N2 boundary.
        let start = rng.gen_range(0.0..28.0);
        let ph = rng.gen_range(0.0..2.0 * PI);
        for ch in FRONTO_CENTRAL {
            c.add_burst(ch, start, rng.gen_range(0.5..0.9), 13.0, rng.gen_range(12.0..20.0), ph);
        }
    }
    c.add_white(ChannelId::ChinEmg, rng.gen_range(4.0..15.0), rng);
    // Slow rolling eye movements, opposite polarity across the pair.
    for _ in 0..rng.gen_range(0..3) {
        let start = rng.gen_range(0.0..27.0);
        let dur = rng.gen_range(1.5..2.5);
        let amp = rng.gen_range(15.0..45.0);
        c.add_deflection(ChannelId::E1, start, dur, amp);
        c.add_deflection(ChannelId::E2, start, dur, -amp);
    }
}

fn synth_n2(c: &mut EpochCanvas, rng: &mut ChaCha20Rng) {
    let theta_f = rng.gen_range(4.5..7.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    for ch in EEG {
        c.add_sine(ch, theta_f, rng.gen_range(10.0..24.0), phase);
    }
    // Delta background on a continuum that overlaps the N3 low end, with a
    // faint occipital echo.
    let delta_f = rng.gen_range(0.7..1.8);
    let delta_amp = rng.gen_range(12.0..55.0);
    let dphase = rng.gen_range(0.0..2.0 * PI);
    let d_occ = rng.gen_range(0.3..1.0);
    let d_start = rng.gen_range(0.0..(30.0f64 * (1.0 - d_occ)).max(0.01));
    for ch in FRONTO_CENTRAL {
        c.add_burst(ch, d_start, 30.0 * d_occ, delta_f, delta_amp * rng.gen_range(0.7..1.0), dphase);
    }
    for ch in [ChannelId::O1, ChannelId::O2] {
        c.add_burst(ch, d_start, 30.0 * d_occ, delta_f, delta_amp * rng.gen_range(0.1..0.3), dphase);
    }
    // One or two bilateral spindles; the summed sigma time stays below the
    // smallest duration rule, so only the waveform carries the signature.
    let n_bursts = rng.gen_range(1..=2);
    let slot = 30.0 / n_bursts as f64;
    for b in 0..n_bursts {
        let dur = rng.gen_range(0.5..1.5);
        let start = b as f64 * slot + rng.gen_range(0.0..(slot - dur).max(0.1));
        let freq = rng.gen_range(12.0..14.5);
        let amp = rng.gen_range(14.0..30.0);
        let ph = rng.gen_range(0.0..2.0 * PI);
        for ch in FRONTO_CENTRAL {
            c.add_burst(ch, start, dur, freq, amp * rng.gen_range(0.8..1.0), ph);
        }
    }
    // Occasional lone biphasic front-channel transient.
    if rng.gen_bool(0.2) {
        let start = rng.gen_range(1.0..28.0);
        let amp = rng.gen_range(60.0..90.0);
        for ch in [ChannelId::F3, ChannelId::F4] {
            c.add_deflection(ch, start, 0.3, -amp);
            c.add_deflection(ch, start + 0.3, 0.3, amp * 0.8);
        }
    }
    c.add_white(ChannelId::ChinEmg, rng.gen_range(3.0..11.0), rng);
}

fn synth_n3(c: &mut EpochCanvas, rng: &mut ChaCha20Rng) {
    // Slow waves across a wide amplitude continuum: the low end stays below
    // the event detector's thresholds and only shows up as delta power.
    let sw_f = rng.gen_range(0.6..1.2);
    let amp = rng.gen_range(28.0..110.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let occupancy = rng.gen_range(0.15..0.8);
    let start = rng.gen_range(0.0..(30.0 * (1.0 - occupancy)));
    let dur = 30.0 * occupancy;
    for ch in FRONTO_CENTRAL {
        c.add_burst(ch, start, dur, sw_f, amp * rng.gen_range(0.85..1.0), phase);
    }
    for ch in [ChannelId::O1, ChannelId::O2] {
        c.add_burst(ch, start, dur, sw_f, amp * rng.gen_range(0.25..0.5), phase);
    }
    // Light theta background and occasional spindle remnants.
    let theta_f = rng.gen_range(4.5..6.5);
    let tphase = rng.gen_range(0.0..2.0 * PI);
    for ch in EEG {
        c.add_sine(ch, theta_f, rng.gen_range(5.0..14.0), tphase);
    }
    if rng.gen_bool(0.3) {
        let s = rng.gen_range(0.0..28.0);
        let ph = rng.gen_range(0.0..2.0 * PI);
        for ch in [ChannelId::C3, ChannelId::C4] {
            c.add_burst(ch, s, rng.gen_range(0.5..1.2), 13.0, rng.gen_range(8.0..18.0), ph);
        }
    }
    c.add_white(ChannelId::ChinEmg, rng.gen_range(2.5..8.0), rng);
}

fn synth_rem(c: &mut EpochCanvas, rng: &mut ChaCha20Rng) {
    // Sawtooth-shaped theta: phase-locked harmonics give the same band
    // power as N1's mixed activity but a sharply asymmetric waveform.
    let theta_f = rng.gen_range(4.5..7.5);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let phases: [f64; 4] = std::array::from_fn(|k| (k + 1) as f64 * phase);
    let amp = rng.gen_range(8.0..20.0);
    for ch in EEG {
        c.add_harmonic_stack(ch, theta_f, amp * rng.gen_range(0.7..1.0), phases);
    }
    // Bursts of conjugate rapid eye movements: sharp, opposite polarity.
    // A quarter of REM epochs are quiet, with few or no eye movements.
    let n_events = if rng.gen_bool(0.3) { rng.gen_range(0..=1) } else { rng.gen_range(2..=6) };
    for _ in 0..n_events {
        let start = rng.gen_range(0.0..29.0);
        let dur = rng.gen_range(0.3..0.8);
        let amp = rng.gen_range(25.0..90.0);
        c.add_deflection(ChannelId::E1, start, dur, amp);
        c.add_deflection(ChannelId::E2, start, dur, -amp);
    }
    // Muscle atonia with occasional twitches.
    c.add_white(ChannelId::ChinEmg, rng.gen_range(1.2..7.0), rng);
}
