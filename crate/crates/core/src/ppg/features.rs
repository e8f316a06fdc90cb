//! The 38 per-window pulse-wave features.
//!
//! Beat geometry follows the foot/peak annotation: T1 is the rise time from
//! foot(i) to peak(i), T2 the descent to foot(i+1), A1/A2 the trapezoidal
//! areas under those limbs, H1/H2 the rise and fall amplitudes, and the
//! R*R features their ratios. IBI statistics are computed in milliseconds.

use log::warn;

use crate::error::Result;
use crate::ppg::beats::BeatAnnotations;

pub const FEATURE_COUNT: usize = 38;

/// Canonical feature order; every feature matrix row d holds the feature
/// named here at index d.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "mean T1",
    "mean T2",
    "mean T",
    "mean RTR",
    "mean A1",
    "mean A2",
    "mean A",
    "mean RAR",
    "mean H1",
    "mean H2",
    "mean RPR",
    "mean amplitude",
    "mean IBI",
    "std T1",
    "std T2",
    "std T",
    "std A1",
    "std A2",
    "std A",
    "std H1",
    "std H2",
    "std RTR",
    "std RAR",
    "std RPR",
    "std amplitude",
    "SDNN",
    "RMSSD",
    "pNN20",
    "pNN50",
    "energy",
    "time duration",
    "bandwidth",
    "time-bandwidth product",
    "heart rate",
    "entropy",
    "S",
    "SD1",
    "SD2",
];

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation (zero for fewer than two values).
pub fn pop_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn ratio(num: f64, den: f64, what: &str) -> f64 {
    if den == 0.0 {
        warn!("zero denominator in {what}; emitting 0");
        0.0
    } else {
        num / den
    }
}

/// Trapezoidal area under `x[from..=to]` with sample spacing 1/fs.
fn trapezoid(x: &[f64], from: usize, to: usize, fs: f64) -> f64 {
    let mut acc = 0.0;
    for i in from..to {
        acc += 0.5 * (x[i] + x[i + 1]);
    }
    acc / fs
}

/// Time-domain HRV statistics over an IBI series in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrvStats {
    pub sdnn: f64,
    pub rmssd: f64,
    pub pnn20: f64,
    pub pnn50: f64,
    pub sd1: f64,
    pub sd2: f64,
    pub s: f64,
}

pub fn hrv_stats(ibis_ms: &[f64]) -> HrvStats {
    let n = ibis_ms.len();
    let diffs: Vec<f64> = ibis_ms.windows(2).map(|w| w[0] - w[1]).collect();
    let rmssd = if diffs.is_empty() {
        0.0
    } else {
        (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt()
    };
    let count_over = |thr: f64| diffs.iter().filter(|d| d.abs() > thr).count() as f64;
    let (pnn20, pnn50) = if n == 0 {
        (0.0, 0.0)
    } else {
        (count_over(20.0) / n as f64, count_over(50.0) / n as f64)
    };
    let sqrt2 = std::f64::consts::SQRT_2;
    let d_scaled: Vec<f64> = ibis_ms.windows(2).map(|w| (w[0] - w[1]) / sqrt2).collect();
    let s_scaled: Vec<f64> = ibis_ms.windows(2).map(|w| (w[0] + w[1]) / sqrt2).collect();
    let sd1 = pop_std(&d_scaled);
    let sd2 = pop_std(&s_scaled);
    HrvStats {
        sdnn: pop_std(ibis_ms),
        rmssd,
        pnn20,
        pnn50,
        sd1,
        sd2,
        s: std::f64::consts::PI * sd1 * sd2,
    }
}

/// Shannon entropy (natural log) of a 10-bin histogram over the IBI series.
pub fn ibi_entropy(ibis_ms: &[f64]) -> f64 {
    const BINS: usize = 10;
    if ibis_ms.is_empty() {
        return 0.0;
    }
    let lo = ibis_ms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ibis_ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 0.0;
    }
    let mut counts = [0usize; BINS];
    for &v in ibis_ms {
        let idx = (((v - lo) / (hi - lo)) * BINS as f64) as usize;
        counts[idx.min(BINS - 1)] += 1;
    }
    let total = ibis_ms.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Extracts the 38 features of one window given its beat annotations.
pub fn extract_window_features(
    window: &[f64],
    beats: &BeatAnnotations,
    fs: f64,
) -> Result<Vec<f64>> {
    beats.validate()?;
    if beats.n_beats() < 2 {
        return Err(crate::error::Error::BeatDetection(format!(
            "{} complete beats, need at least 2",
            beats.n_beats()
        )));
    }
    let nb = beats.n_beats();
    let mut t1 = Vec::with_capacity(nb);
    let mut t2 = Vec::with_capacity(nb);
    let mut t = Vec::with_capacity(nb);
    let mut rtr = Vec::with_capacity(nb);
    let mut a1 = Vec::with_capacity(nb);
    let mut a2 = Vec::with_capacity(nb);
    let mut a = Vec::with_capacity(nb);
    let mut rar = Vec::with_capacity(nb);
    let mut h1 = Vec::with_capacity(nb);
    let mut h2 = Vec::with_capacity(nb);
    let mut rpr = Vec::with_capacity(nb);
    for i in 0..nb {
        let foot = beats.feet[i];
        let peak = beats.peaks[i];
        let next_foot = beats.feet[i + 1];
        let t1_i = (peak - foot) as f64 / fs;
        let t2_i = (next_foot - peak) as f64 / fs;
        t1.push(t1_i);
        t2.push(t2_i);
        t.push(t1_i + t2_i);
        rtr.push(ratio(t1_i, t2_i, "RTR"));
        let a1_i = trapezoid(window, foot, peak, fs);
        let a2_i = trapezoid(window, peak, next_foot, fs);
        a1.push(a1_i);
        a2.push(a2_i);
        a.push(a1_i + a2_i);
        rar.push(ratio(a1_i, a2_i, "RAR"));
        let h1_i = window[peak] - window[foot];
        let h2_i = window[peak] - window[next_foot];
        h1.push(h1_i);
        h2.push(h2_i);
        rpr.push(ratio(h1_i, h2_i, "RPR"));
    }
    let amplitude: Vec<f64> = window.iter().map(|x| x.abs()).collect();
    let ibis_ms: Vec<f64> = beats
        .peaks
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / fs * 1000.0)
        .collect();
    let hrv = hrv_stats(&ibis_ms);

    let energy: f64 = window.iter().map(|x| x * x).sum();
    let duration = window.len() as f64 / fs;
    let diff_energy: f64 = window
        .windows(2)
        .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
        .sum();
    let bandwidth = ratio(diff_energy, energy, "bandwidth");
    let heart_rate = beats.peaks.len() as f64 / duration * 60.0;

    let mut out = Vec::with_capacity(FEATURE_COUNT);
    out.extend_from_slice(&[
        mean(&t1),
        mean(&t2),
        mean(&t),
        mean(&rtr),
        mean(&a1),
        mean(&a2),
        mean(&a),
        mean(&rar),
        mean(&h1),
        mean(&h2),
        mean(&rpr),
        mean(&amplitude),
        mean(&ibis_ms),
    ]);
    out.extend_from_slice(&[
        pop_std(&t1),
        pop_std(&t2),
        pop_std(&t),
        pop_std(&a1),
        pop_std(&a2),
        pop_std(&a),
        pop_std(&h1),
        pop_std(&h2),
        pop_std(&rtr),
        pop_std(&rar),
        pop_std(&rpr),
        pop_std(&amplitude),
    ]);
    out.extend_from_slice(&[
        hrv.sdnn,
        hrv.rmssd,
        hrv.pnn20,
        hrv.pnn50,
        energy,
        duration,
        bandwidth,
        duration * bandwidth,
        heart_rate,
        ibi_entropy(&ibis_ms),
        hrv.s,
        hrv.sd1,
        hrv.sd2,
    ]);
    debug_assert_eq!(out.len(), FEATURE_COUNT);
    Ok(out)
}
