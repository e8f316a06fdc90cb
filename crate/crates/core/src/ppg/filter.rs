//! Butterworth band-pass design and zero-phase filtering.
//!
//! The design path is the classical one: analog low-pass prototype poles,
//! low-pass-to-band-pass transform, bilinear transform with frequency
//! pre-warping, then second-order sections. Filtering runs the cascade
//! forward and backward over an odd-extension-padded signal with
//! steady-state initial conditions, so phase is zero and DC is rejected to
//! rounding noise.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Analog prototype order of the band-pass (the digital filter has twice as
/// many poles).
pub const FILTER_ORDER: usize = 3;
/// Pass band of the pulse-wave filter, Hz.
pub const BAND_LO_HZ: f64 = 0.6;
pub const BAND_HI_HZ: f64 = 5.0;

#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator with a0 normalized to 1; stored as [a1, a2].
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Steady-state internal state for a constant input level.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        let z1 = y - self.b[0] * x;
        let z2 = self.b[2] * x - self.a[1] * y;
        [z1, z2]
    }

    fn run(&self, x: &[f64], out: &mut Vec<f64>, init_level: f64) {
        let mut z = self.steady_state(init_level);
        out.clear();
        out.reserve(x.len());
        for &xi in x {
            let y = self.b[0] * xi + z[0];
            z[0] = self.b[1] * xi - self.a[0] * y + z[1];
            z[1] = self.b[2] * xi - self.a[1] * y;
            out.push(y);
        }
    }
}

#[derive(Debug, Clone)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    fs: f64,
}

impl SosFilter {
    /// Single-pass magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / self.fs;
        let z1 = Complex64::new(0.0, -w).exp();
        let z2 = Complex64::new(0.0, -2.0 * w).exp();
        let mut h = Complex64::new(1.0, 0.0);
        for s in &self.sections {
            let num = Complex64::new(s.b[0], 0.0) + z1 * s.b[1] + z2 * s.b[2];
            let den = Complex64::new(1.0, 0.0) + z1 * s.a[0] + z2 * s.a[1];
            h *= num / den;
        }
        h.norm()
    }

    fn run_cascade(&self, signal: &[f64]) -> Vec<f64> {
        let mut cur = signal.to_vec();
        let mut next = Vec::with_capacity(signal.len());
        let mut level = if signal.is_empty() { 0.0 } else { signal[0] };
        for s in &self.sections {
            s.run(&cur, &mut next, level);
            level *= s.dc_gain();
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward-backward (zero-phase) filtering with odd-extension padding.
    pub fn filtfilt(&self, signal: &[f64]) -> Result<Vec<f64>> {
        if signal.len() < 3 * FILTER_ORDER {
            return Err(Error::Signal(format!(
                "signal of {} samples is shorter than 3x the filter order",
                signal.len()
            )));
        }
        let pad = ((3.0 * self.fs) as usize).min(signal.len() - 1).max(1);
        let n = signal.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let first = signal[0];
        let last = signal[n - 1];
        for i in (1..=pad).rev() {
            ext.push(2.0 * first - signal[i]);
        }
        ext.extend_from_slice(signal);
        for i in (n - 1 - pad..n - 1).rev() {
            ext.push(2.0 * last - signal[i]);
        }
        let forward = self.run_cascade(&ext);
        let mut rev: Vec<f64> = forward.into_iter().rev().collect();
        rev = self.run_cascade(&rev);
        rev.reverse();
        Ok(rev[pad..pad + n].to_vec())
    }
}

/// Designs an order-`FILTER_ORDER` Butterworth band-pass between `lo_hz` and
/// `hi_hz` for sample rate `fs`.
pub fn design_bandpass(lo_hz: f64, hi_hz: f64, fs: f64) -> Result<SosFilter> {
    if fs <= 10.0 {
        return Err(Error::Signal(format!(
            "sample rate {fs} Hz too low, need > 10"
        )));
    }
    if !(0.0 < lo_hz && lo_hz < hi_hz && hi_hz < fs / 2.0) {
        return Err(Error::Signal(format!(
            "band [{lo_hz}, {hi_hz}] Hz invalid for fs {fs}"
        )));
    }
    let n = FILTER_ORDER;
    let fs2 = 2.0 * fs;
    // Pre-warped analog band edges.
    let w1 = fs2 * (std::f64::consts::PI * lo_hz / fs).tan();
    let w2 = fs2 * (std::f64::consts::PI * hi_hz / fs).tan();
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    // Butterworth low-pass prototype poles on the unit left-half circle.
    let mut proto = Vec::with_capacity(n);
    for k in 0..n {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + n as f64 + 1.0) / (2.0 * n as f64);
        proto.push(Complex64::new(theta.cos(), theta.sin()));
    }

    // Low-pass -> band-pass: each prototype pole splits in two.
    let mut analog_poles = Vec::with_capacity(2 * n);
    for p in proto {
        let half = p * (bw / 2.0);
        let disc = (half * half - Complex64::new(w0 * w0, 0.0)).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }
    // n analog zeros at s = 0; gain bw^n.
    let analog_gain = bw.powi(n as i32);

    // Bilinear transform.
    let mut digital_poles = Vec::with_capacity(2 * n);
    let mut den_prod = Complex64::new(1.0, 0.0);
    for &p in &analog_poles {
        digital_poles.push((Complex64::new(fs2, 0.0) + p) / (Complex64::new(fs2, 0.0) - p));
        den_prod *= Complex64::new(fs2, 0.0) - p;
    }
    // Analog zeros at 0 map to z = 1 and contribute (fs2 - 0) each; the n
    // remaining zeros at infinity land on z = -1.
    let num_prod = Complex64::new(fs2.powi(n as i32), 0.0);
    let gain = analog_gain * (num_prod / den_prod).re;

    // Pair poles into conjugate sections; real poles pair with each other.
    let mut complex_poles: Vec<Complex64> = Vec::new();
    let mut real_poles: Vec<f64> = Vec::new();
    for p in digital_poles {
        if p.im.abs() > 1e-12 {
            if p.im > 0.0 {
                complex_poles.push(p);
            }
        } else {
            real_poles.push(p.re);
        }
    }
    real_poles.sort_by(|a, b| a.partial_cmp(b).expect("finite poles"));
    let mut sections = Vec::with_capacity(n);
    for p in complex_poles {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * p.re, p.norm_sqr()],
        });
    }
    for pair in real_poles.chunks(2) {
        match pair {
            [p, q] => sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(p + q), p * q],
            }),
            [p] => sections.push(Biquad {
                b: [1.0, -1.0, 0.0],
                a: [-p, 0.0],
            }),
            _ => unreachable!(),
        }
    }
    if sections.len() != n {
        return Err(Error::Signal(format!(
            "expected {n} sections, built {}",
            sections.len()
        )));
    }
    // Fold the overall gain into the first section.
    for b in sections[0].b.iter_mut() {
        *b *= gain;
    }
    Ok(SosFilter { sections, fs })
}

/// The preprocessing filter: 3rd-order 0.6-5 Hz Butterworth applied
/// forward-backward.
pub fn bandpass_filter(signal: &[f64], fs: f64) -> Result<Vec<f64>> {
    design_bandpass(BAND_LO_HZ, BAND_HI_HZ, fs)?.filtfilt(signal)
}
