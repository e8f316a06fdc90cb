//! Pulse peak and foot detection within one window.
//!
//! Peaks are local maxima above a rolling-mean threshold, thinned by a
//! refractory distance equivalent to 220 bpm. Feet are the global minima
//! between consecutive peaks; the stretches before the first and after the
//! last peak supply the outermost feet, and a peak flush against the window
//! edge (no room for its foot) is discarded as a partial beat.

use crate::error::{Error, Result};

/// Hard ceiling on plausible heart rate, used as the refractory bound.
pub const MAX_BPM: f64 = 220.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeatAnnotations {
    /// Sample indices of beat feet (one more than peaks).
    pub feet: Vec<usize>,
    /// Sample indices of beat peaks.
    pub peaks: Vec<usize>,
}

impl BeatAnnotations {
    pub fn n_beats(&self) -> usize {
        self.peaks.len()
    }

    /// Checks the strict interleaving foot(i) < peak(i) < foot(i+1).
    pub fn validate(&self) -> Result<()> {
        if self.feet.len() != self.peaks.len() + 1 {
            return Err(Error::BeatDetection(format!(
                "{} feet for {} peaks",
                self.feet.len(),
                self.peaks.len()
            )));
        }
        for (i, &p) in self.peaks.iter().enumerate() {
            if !(self.feet[i] < p && p < self.feet[i + 1]) {
                return Err(Error::BeatDetection(format!(
                    "interleaving violated at beat {i}: foot {} peak {p} foot {}",
                    self.feet[i],
                    self.feet[i + 1]
                )));
            }
        }
        Ok(())
    }

    /// Peak-to-peak intervals in seconds.
    pub fn ibis_s(&self, fs: f64) -> Vec<f64> {
        self.peaks
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64 / fs)
            .collect()
    }
}

fn rolling_mean(x: &[f64], half_width: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn argmin(x: &[f64], range: std::ops::Range<usize>) -> usize {
    let mut best = range.start;
    for i in range {
        if x[i] < x[best] {
            best = i;
        }
    }
    best
}

pub fn detect_beats(window: &[f64], fs: f64) -> Result<BeatAnnotations> {
    if window.len() < 3 {
        return Err(Error::BeatDetection("window too short".into()));
    }
    let min_dist = ((60.0 / MAX_BPM) * fs).round().max(1.0) as usize;
    let threshold = rolling_mean(window, (fs.round() as usize / 2).max(1));

    let mut candidates: Vec<usize> = Vec::new();
    for i in 1..window.len() - 1 {
        if window[i] > window[i - 1] && window[i] >= window[i + 1] && window[i] > threshold[i] {
            candidates.push(i);
        }
    }
    // Keep the tallest candidate inside every refractory neighborhood.
    candidates.sort_by(|&a, &b| {
        window[b]
            .partial_cmp(&window[a])
            .expect("finite samples")
            .then(a.cmp(&b))
    });
    let mut accepted: Vec<usize> = Vec::new();
    for &c in &candidates {
        if accepted.iter().all(|&p| p.abs_diff(c) >= min_dist) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();

    // Partial beats at the window edges have no room for a foot.
    while accepted.first() == Some(&0) {
        accepted.remove(0);
    }
    while accepted.last() == Some(&(window.len() - 1)) {
        accepted.pop();
    }
    if accepted.len() < 2 {
        return Err(Error::BeatDetection(format!(
            "found {} peaks, need at least 2",
            accepted.len()
        )));
    }

    let mut feet = Vec::with_capacity(accepted.len() + 1);
    feet.push(argmin(window, 0..accepted[0]));
    for pair in accepted.windows(2) {
        feet.push(argmin(window, pair[0] + 1..pair[1]));
    }
    feet.push(argmin(window, accepted.last().unwrap() + 1..window.len()));

    let ann = BeatAnnotations {
        feet,
        peaks: accepted,
    };
    ann.validate()?;
    Ok(ann)
}

/// Simple pulse train for tests: raised-cosine rise, cosine decay to the
/// next beat. Returns the signal and the true peak times.
#[cfg(test)]
pub(crate) fn pulse_train(bpm: f64, seconds: f64, fs: f64) -> (Vec<f64>, Vec<f64>) {
    let ibi = 60.0 / bpm;
    let rise = 0.25_f64.min(ibi * 0.3);
    let n = (seconds * fs) as usize;
    let mut x = vec![0.0; n];
    let mut peaks = Vec::new();
    let mut t0 = 0.0;
    while t0 + ibi <= seconds {
        peaks.push(t0 + rise);
        for i in ((t0 * fs) as usize)..(((t0 + ibi) * fs) as usize).min(n) {
            let u = i as f64 / fs - t0;
            x[i] = if u < rise {
                0.5 * (1.0 - (std::f64::consts::PI * u / rise).cos())
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (u - rise) / (ibi - rise)).cos())
            };
        }
        t0 += ibi;
    }
    (x, peaks)
}
