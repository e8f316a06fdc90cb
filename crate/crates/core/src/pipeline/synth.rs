//! Synthetic data generators: pulse-wave recordings with controllable beat
//! statistics, and a two-class multivariate time-series dataset for
//! public-mode runs.
//!
//! The pulse generator writes asymmetric beats (raised-cosine rise, slower
//! cosine decay) at jittered inter-beat intervals. The positive-class
//! profile has lower beat-to-beat variability and a flatter slow heart-rate
//! drift, so variability features and heart-rate trajectories separate the
//! classes after preprocessing.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pipeline::partition::{PpgPartition, PublicPartition};
use crate::ppg::{build_feature_matrix, FeatureMatrix, RawRecording};
use crate::rng::{seeded_rng, standard_normal, subseed, uniform, SeededRng};
use crate::tensor::Tensor;
use rayon::prelude::*;

pub const DEFAULT_DURATION_S: f64 = 300.0;
pub const DEFAULT_STATIC_S: f64 = 180.0;
pub const DEFAULT_FS: f64 = 100.0;

/// Beat-statistics profile of one synthetic subject.
#[derive(Debug, Clone, Copy)]
pub struct SynthProfile {
    /// Mean heart rate, beats per minute.
    pub bpm_mean: f64,
    /// Amplitude of the slow heart-rate drift, bpm.
    pub bpm_std: f64,
    /// Frequency band of the slow drift, Hz (drawn per subject).
    pub wander_band: (f64, f64),
    /// Relative beat-to-beat jitter of the inter-beat interval.
    pub hrv: f64,
    /// Amplitude of the slow rise-time modulation (beat morphology drift).
    pub morph_mod: f64,
    pub class_positive: bool,
}

impl SynthProfile {
    /// Low beat-to-beat variability, a weaker and faster heart-rate drift,
    /// and a pronounced slow drift of the beat morphology.
    pub fn positive() -> Self {
        Self {
            bpm_mean: 72.0,
            bpm_std: 2.0,
            wander_band: (0.025, 0.035),
            hrv: 0.012,
            morph_mod: 0.3,
            class_positive: true,
        }
    }

    pub fn negative() -> Self {
        Self {
            bpm_mean: 72.0,
            bpm_std: 6.0,
            wander_band: (0.010, 0.020),
            hrv: 0.045,
            morph_mod: 0.05,
            class_positive: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(40.0..=180.0).contains(&self.bpm_mean) {
            return Err(Error::Config(format!(
                "bpm {} outside the plausible 40..180 range",
                self.bpm_mean
            )));
        }
        if self.hrv < 0.0 || self.bpm_std < 0.0 {
            return Err(Error::Config("hrv and bpm_std must be non-negative".into()));
        }
        if !(0.0 < self.wander_band.0 && self.wander_band.0 <= self.wander_band.1) {
            return Err(Error::Config(format!(
                "wander band {:?} must be an ordered positive range",
                self.wander_band
            )));
        }
        if !(0.0..1.0).contains(&self.morph_mod) {
            return Err(Error::Config(format!(
                "morph_mod {} must be in [0, 1)",
                self.morph_mod
            )));
        }
        Ok(())
    }
}

/// Generator-side ground truth for oracle tests.
#[derive(Debug, Clone, Default)]
pub struct SynthTruth {
    /// True inter-beat intervals of the stimulation phase, seconds.
    pub ibis_s: Vec<f64>,
    /// True peak times of the stimulation phase, seconds.
    pub peak_times_s: Vec<f64>,
}

fn render_phase(
    profile: &SynthProfile,
    duration_s: f64,
    fs: f64,
    wander_freq: f64,
    wander_phase: f64,
    morph_freq: f64,
    morph_phase: f64,
    rng: &mut SeededRng,
) -> (Vec<f64>, SynthTruth) {
    let n = (duration_s * fs) as usize;
    let mut x = vec![0.0; n];
    let mut truth = SynthTruth::default();
    let mut t0 = 0.0f64;
    let mut prev_peak: Option<f64> = None;
    while t0 < duration_s {
        let bpm = profile.bpm_mean
            + profile.bpm_std
                * (2.0 * std::f64::consts::PI * wander_freq * t0 + wander_phase).sin();
        let z = standard_normal(rng).clamp(-3.0, 3.0);
        let ibi = (60.0 / bpm * (1.0 + profile.hrv * z)).max(0.25);
        let morph = 1.0
            + profile.morph_mod
                * (2.0 * std::f64::consts::PI * morph_freq * t0 + morph_phase).sin();
        let rise = (0.25 * morph).clamp(0.1, 0.45 * ibi);
        let amp = 1.0 + 0.05 * standard_normal(rng).clamp(-3.0, 3.0);
        let peak_t = t0 + rise;
        if peak_t < duration_s {
            if let Some(prev) = prev_peak {
                truth.ibis_s.push(peak_t - prev);
            }
            truth.peak_times_s.push(peak_t);
            prev_peak = Some(peak_t);
        }
        // Compact bump: cosine rise, slower cosine decay back to a flat
        // baseline that lasts until the next beat. The flat stretch keeps
        // descending-limb noise below the detector's rolling mean.
        let decay = 0.5 * (ibi - rise);
        let start = (t0 * fs) as usize;
        let stop = (((t0 + ibi) * fs) as usize).min(n);
        for i in start..stop {
            let u = i as f64 / fs - t0;
            let w = if u < rise {
                0.5 * (1.0 - (std::f64::consts::PI * u / rise).cos())
            } else if u < rise + decay {
                0.5 * (1.0 + (std::f64::consts::PI * (u - rise) / decay).cos())
            } else {
                0.0
            };
            x[i] = amp * w;
        }
        t0 += ibi;
    }
    // Sub-band drift (removed by the band-pass) plus low-level broadband noise.
    let drift_phase = uniform(rng, 0.0, 2.0 * std::f64::consts::PI);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v += 0.3 * (2.0 * std::f64::consts::PI * 0.08 * t + drift_phase).sin();
        *v += 0.02 * standard_normal(rng);
    }
    (x, truth)
}

/// Generates one recording plus its generator-side truth.
pub fn generate_synthetic_ppg_with_truth(
    subject_id: &str,
    profile: &SynthProfile,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<(RawRecording, SynthTruth)> {
    profile.validate()?;
    let mut rng = seeded_rng(seed);
    let wander_freq = uniform(&mut rng, profile.wander_band.0, profile.wander_band.1);
    let wander_phase = uniform(&mut rng, 0.0, 2.0 * std::f64::consts::PI);
    let morph_freq = uniform(&mut rng, profile.wander_band.0, profile.wander_band.1);
    let morph_phase = uniform(&mut rng, 0.0, 2.0 * std::f64::consts::PI);
    let (static_phase, _) = render_phase(
        profile,
        DEFAULT_STATIC_S,
        fs,
        wander_freq,
        wander_phase,
        morph_freq,
        morph_phase,
        &mut rng,
    );
    let (stimulation_phase, truth) = render_phase(
        profile,
        duration_s,
        fs,
        wander_freq,
        wander_phase,
        morph_freq,
        morph_phase,
        &mut rng,
    );
    let rec = RawRecording {
        subject_id: subject_id.to_string(),
        sample_rate: fs,
        static_phase,
        stimulation_phase,
    };
    rec.validate()?;
    Ok((rec, truth))
}

pub fn generate_synthetic_ppg(
    subject_id: &str,
    profile: &SynthProfile,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<RawRecording> {
    generate_synthetic_ppg_with_truth(subject_id, profile, duration_s, fs, seed).map(|(r, _)| r)
}

/// A full synthetic cohort: `n_tp` positives, `n_tn` negatives, and an
/// uncertain pool of `n_un` subjects of which round(planted_rate * n_un)
/// are drawn from the positive generator (negative given labels regardless).
/// Returns the partition plus the planted ids.
pub fn synthetic_ppg_partition(
    n_tp: usize,
    n_tn: usize,
    n_un: usize,
    planted_rate: f64,
    seed: u64,
) -> Result<(PpgPartition, Vec<String>)> {
    let n_planted = (planted_rate * n_un as f64 + 0.5).floor() as usize;
    let mut plant_rng = seeded_rng(subseed(seed, "planted"));
    let planted_idx = crate::rng::sample_indices(n_un, n_planted.min(n_un), &mut plant_rng);
    let planted: std::collections::BTreeSet<usize> = planted_idx.into_iter().collect();

    #[derive(Clone)]
    struct Job {
        id: String,
        profile: SynthProfile,
        seed: u64,
    }
    let mut jobs = Vec::new();
    for i in 0..n_tp {
        jobs.push(Job {
            id: format!("tp{i:03}"),
            profile: SynthProfile::positive(),
            seed: subseed(seed, &format!("tp{i}")),
        });
    }
    for i in 0..n_tn {
        jobs.push(Job {
            id: format!("tn{i:03}"),
            profile: SynthProfile::negative(),
            seed: subseed(seed, &format!("tn{i}")),
        });
    }
    let mut planted_ids = Vec::new();
    for i in 0..n_un {
        let profile = if planted.contains(&i) {
            planted_ids.push(format!("un{i:03}"));
            SynthProfile::positive()
        } else {
            SynthProfile::negative()
        };
        jobs.push(Job {
            id: format!("un{i:03}"),
            profile,
            seed: subseed(seed, &format!("un{i}")),
        });
    }
    let built: Result<Vec<(String, FeatureMatrix)>> = jobs
        .par_iter()
        .map(|job| {
            let rec = generate_synthetic_ppg(
                &job.id,
                &job.profile,
                DEFAULT_DURATION_S,
                DEFAULT_FS,
                job.seed,
            )?;
            Ok((job.id.clone(), build_feature_matrix(&rec)?))
        })
        .collect();
    let samples: BTreeMap<String, FeatureMatrix> = built?.into_iter().collect();
    Ok((
        PpgPartition {
            tp_ids: (0..n_tp).map(|i| format!("tp{i:03}")).collect(),
            tn_ids: (0..n_tn).map(|i| format!("tn{i:03}")).collect(),
            un_ids: (0..n_un).map(|i| format!("un{i:03}")).collect(),
            samples,
        },
        planted_ids,
    ))
}

/// Two-class multivariate series: the classes differ in dominant frequency
/// and per-channel amplitude profile, with additive noise. Rows are min-max
/// normalized per sample, matching the public-mode loading convention.
pub fn synthetic_public_dataset(
    n: usize,
    channels: usize,
    t: usize,
    seed: u64,
) -> Result<PublicPartition> {
    if n == 0 || channels == 0 || t < 8 {
        return Err(Error::Config(format!(
            "degenerate synthetic dataset ({n} samples, {channels} channels, {t} points)"
        )));
    }
    let mut ids = Vec::with_capacity(n);
    let mut labels = BTreeMap::new();
    let mut samples = BTreeMap::new();
    for i in 0..n {
        let id = format!("s{i:04}");
        let label = (i % 2) as u8;
        let mut rng = seeded_rng(subseed(seed, &format!("public{i}")));
        let cycles = if label == 0 { 3.0 } else { 5.0 };
        let mut data = vec![0.0; channels * t];
        for c in 0..channels {
            let amp = if label == 0 {
                1.0 + 0.5 * (c as f64).sin()
            } else {
                1.0 + 0.5 * (c as f64).cos()
            };
            let phase = uniform(&mut rng, 0.0, 2.0 * std::f64::consts::PI);
            for k in 0..t {
                let u = k as f64 / t as f64;
                data[c * t + k] = amp * (2.0 * std::f64::consts::PI * cycles * u + phase).sin()
                    + 0.35 * standard_normal(&mut rng);
            }
        }
        let mut m = FeatureMatrix::from_channels(Tensor::new(vec![channels, t], data)?)?;
        m.minmax_normalize();
        labels.insert(id.clone(), label);
        samples.insert(id.clone(), m);
        ids.push(id);
    }
    Ok(PublicPartition {
        ids,
        labels,
        samples,
    })
}
