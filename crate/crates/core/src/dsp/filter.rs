//! Butterworth band-pass design and zero-phase (forward-backward) filtering.
//!
//! Filters are designed as cascaded second-order sections: an order-2 analog
//! Butterworth prototype is transformed to a band-pass (4th order total) and
//! discretized with the bilinear transform. Zero-phase filtering runs the
//! cascade forward and backward over a reflect-padded signal with steady-state
//! initial conditions, so event timing is preserved for overlap tests.

use rustfft::num_complex::Complex64;

/// One second-order section with `a0` normalized to 1.
#[derive(Debug, Clone, Copy)]
pub struct Sos {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Sos {
    /// DC gain of the section.
    fn gain_at_dc(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Steady-state transposed direct-form II state for a unit step input.
    fn unit_step_state(&self) -> (f64, f64) {
        let y = self.gain_at_dc();
        let z2 = self.b2 - self.a2 * y;
        let z1 = self.b1 - self.a1 * y + z2;
        (z1, z2)
    }
}

/// A zero-phase band-pass filter: cascaded biquads applied forward-backward.
#[derive(Debug, Clone)]
pub struct BandPass {
    sections: Vec<Sos>,
    pad: usize,
}

impl BandPass {
    /// Designs a 4th-order Butterworth band-pass with corner frequencies
    /// `(lo_hz, hi_hz)` at sampling rate `fs`. `pad` is the reflect-padding
    /// length in samples used by [`BandPass::filtfilt`].
    pub fn butterworth(lo_hz: f64, hi_hz: f64, fs: f64, pad: usize) -> Self {
        assert!(
            0.0 < lo_hz && lo_hz < hi_hz && hi_hz < fs / 2.0,
            "band edges must satisfy 0 < lo < hi < fs/2"
        );
        let sections = design_bandpass_order2(lo_hz, hi_hz, fs);
        Self { sections, pad }
    }

    pub fn sections(&self) -> &[Sos] {
        &self.sections
    }

    /// Magnitude response of a single forward pass at frequency `f_hz`.
    pub fn magnitude_at(&self, f_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f_hz / fs;
        let z_inv = Complex64::new(0.0, -w).exp();
        let mut h = Complex64::new(1.0, 0.0);
        for s in &self.sections {
            let num = Complex64::new(s.b0, 0.0) + z_inv * (s.b1 + s.b2 * z_inv);
            let den = Complex64::new(1.0, 0.0) + z_inv * (s.a1 + s.a2 * z_inv);
            h *= num / den;
        }
        h.norm()
    }

    /// One forward pass of the cascade with step steady-state initialization.
    fn forward(&self, x: &mut [f64]) {
        let mut scale = x[0];
        for s in &self.sections {
            let (z1u, z2u) = s.unit_step_state();
            let mut z1 = z1u * scale;
            let mut z2 = z2u * scale;
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b0 * xin + z1;
                z1 = s.b1 * xin - s.a1 * y + z2;
                z2 = s.b2 * xin - s.a2 * y;
                *v = y;
            }
            scale *= s.gain_at_dc();
        }
    }

    /// Zero-phase filtering: odd-reflect pad, filter, reverse, filter, reverse.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        for i in (1..=pad).rev() {
            ext.push(2.0 * first - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * last - x[n - 1 - i]);
        }

        self.forward(&mut ext);
        ext.reverse();
        self.forward(&mut ext);
        ext.reverse();

        ext[pad..pad + n].to_vec()
    }
}

/// Poles/zeros/gain of the analog order-2 Butterworth low-pass prototype,
/// transformed to band-pass and discretized. Returns two biquads.
fn design_bandpass_order2(lo_hz: f64, hi_hz: f64, fs: f64) -> Vec<Sos> {
    use std::f64::consts::PI;
    // Normalized edges pre-warped for the bilinear transform (internal fs = 2).
    let warp = |f: f64| 4.0 * (PI * (f / (fs / 2.0)) / 2.0).tan();
    let w_lo = warp(lo_hz);
    let w_hi = warp(hi_hz);
    let bw = w_hi - w_lo;
    let wo = (w_lo * w_hi).sqrt();

    // Order-2 Butterworth prototype poles.
    let proto = [
        Complex64::from_polar(1.0, 3.0 * PI / 4.0),
        Complex64::from_polar(1.0, 5.0 * PI / 4.0),
    ];

    // Low-pass -> band-pass: each pole splits into two; n zeros appear at s=0.
    let mut poles = Vec::with_capacity(4);
    for p in proto {
        let ps = p * (bw / 2.0);
        let disc = (ps * ps - Complex64::new(wo * wo, 0.0)).sqrt();
        poles.push(ps + disc);
        poles.push(ps - disc);
    }
    let gain_analog = bw * bw; // k * bw^n with k = 1, n = 2

    // Bilinear transform (internal sampling rate 2 => 2*fs = 4).
    let fs2 = Complex64::new(4.0, 0.0);
    let mut z_poles = Vec::with_capacity(4);
    let mut num = Complex64::new(1.0, 0.0);
    let mut den = Complex64::new(1.0, 0.0);
    for p in &poles {
        z_poles.push((fs2 + p) / (fs2 - p));
        den *= fs2 - p;
    }
    // Analog zeros: two at s = 0 (map to z = 1); two implicit at infinity (z = -1).
    for _ in 0..2 {
        num *= fs2;
    }
    let gain = gain_analog * (num / den).re;

    // Pair conjugate poles; give each biquad one zero at +1 and one at -1,
    // splitting the overall gain evenly.
    let mut upper: Vec<Complex64> = z_poles.iter().copied().filter(|p| p.im >= 0.0).collect();
    upper.sort_by(|a, b| a.re.total_cmp(&b.re));
    assert_eq!(upper.len(), 2, "expected two conjugate pole pairs");
    let g_even = gain.abs().sqrt();
    upper
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let gs = if i == 0 { g_even * gain.signum() } else { g_even };
            Sos {
                b0: gs,
                b1: 0.0,
                b2: -gs,
                a1: -2.0 * p.re,
                a2: p.norm_sqr(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const FS: f64 = 200.0;

    fn sine(freq: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    fn peak(x: &[f64]) -> f64 {
        x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn sections_are_stable() {
        for (lo, hi) in [(0.3, 2.0), (0.3, 35.0), (11.0, 16.0)] {
            let f = BandPass::butterworth(lo, hi, FS, 200);
            for s in f.sections() {
                // |poles| < 1 <=> a2 < 1 and |a1| < 1 + a2 for a real biquad
                assert!(s.a2 < 1.0, "a2 = {}", s.a2);
                assert!(s.a1.abs() < 1.0 + s.a2, "a1 = {}, a2 = {}", s.a1, s.a2);
            }
        }
    }

    #[test]
    fn magnitude_matches_butterworth_shape() {
        // At the corner frequencies a Butterworth band-pass is -3 dB; in the
        // middle of the band it is ~unity; far outside it is strongly rejected.
        let f = BandPass::butterworth(11.0, 16.0, FS, 200);
        let half = 0.5f64.sqrt();
        assert!((f.magnitude_at(11.0, FS) - half).abs() < 1e-6);
        assert!((f.magnitude_at(16.0, FS) - half).abs() < 1e-6);
        assert!((f.magnitude_at(13.27, FS) - 1.0).abs() < 0.01);
        assert!(f.magnitude_at(2.0, FS) < 0.01);
        assert!(f.magnitude_at(50.0, FS) < 0.01);
    }

    #[test]
    fn filtfilt_passes_mid_band_sine_with_squared_gain() {
        let f = BandPass::butterworth(8.0, 12.0, FS, 200);
        let x = sine(10.0, 1.0, 6000);
        let y = f.filtfilt(&x);
        let expected = f.magnitude_at(10.0, FS).powi(2);
        let got = peak(&y[1000..5000]);
        assert!(
            (got - expected).abs() < 0.02,
            "peak {got}, expected {expected}"
        );
    }

    #[test]
    fn filtfilt_rejects_out_of_band_sine() {
        let f = BandPass::butterworth(11.0, 16.0, FS, 200);
        let x = sine(2.0, 1.0, 6000);
        let y = f.filtfilt(&x);
        assert!(peak(&y[1000..5000]) < 0.01);
    }

    #[test]
    fn filtfilt_is_zero_phase() {
        // The envelope peak of a windowed in-band burst must not move.
        let f = BandPass::butterworth(8.0, 12.0, FS, 200);
        let n = 6000;
        let center = 3000;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 - center as f64) / FS;
                (-t * t / 0.5).exp() * (2.0 * PI * 10.0 * i as f64 / FS).sin()
            })
            .collect();
        let y = f.filtfilt(&x);
        // Envelope via moving RMS over half a cycle.
        let rms_peak = |v: &[f64]| {
            let w = 10usize;
            (w..v.len() - w)
                .max_by(|&a, &b| {
                    let e = |c: usize| v[c - w..c + w].iter().map(|s| s * s).sum::<f64>();
                    e(a).total_cmp(&e(b))
                })
                .unwrap()
        };
        let px = rms_peak(&x);
        let py = rms_peak(&y);
        assert!(
            (px as i64 - py as i64).unsigned_abs() < 20,
            "envelope peak moved from {px} to {py}"
        );
    }

    #[test]
    fn filtfilt_is_linear_in_scale() {
        let f = BandPass::butterworth(0.3, 2.0, FS, 200);
        let x = sine(1.0, 100.0, 6000);
        let y1 = f.filtfilt(&x);
        let x3: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let y3 = f.filtfilt(&x3);
        for (a, b) in y1.iter().zip(&y3) {
            assert!((3.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn filtfilt_handles_constant_signal() {
        let f = BandPass::butterworth(0.3, 2.0, FS, 200);
        let x = vec![5.0; 6000];
        let y = f.filtfilt(&x);
        // A band-pass blocks DC; steady-state init keeps edges controlled.
        assert!(peak(&y) < 0.5, "peak {}", peak(&y));
    }
}
