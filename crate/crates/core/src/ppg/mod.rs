//! Raw pulse-wave recordings to normalized feature matrices.
//!
//! The pipeline per subject: band-pass filter both phases, subtract the
//! static-phase mean, cut the stimulation phase into 70 overlapping
//! 20-second windows, detect beats and extract 38 features per window, then
//! min-max normalize each feature row across the subject's windows.

pub mod beats;
pub mod features;
pub mod filter;
pub mod windows;

use std::io::{BufRead, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use beats::{detect_beats, BeatAnnotations};
pub use features::{extract_window_features, FEATURE_COUNT, FEATURE_NAMES};
pub use filter::bandpass_filter;
pub use windows::{segment_windows, WINDOWS_PER_RECORDING};

/// One subject's raw recording: a resting baseline phase followed by the
/// stimulation phase, both at the same sample rate.
#[derive(Debug, Clone)]
pub struct RawRecording {
    pub subject_id: String,
    pub sample_rate: f64,
    pub static_phase: Vec<f64>,
    pub stimulation_phase: Vec<f64>,
}

impl RawRecording {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate <= 0.0 {
            return Err(Error::Signal(format!(
                "subject {}: sample rate {} must be positive",
                self.subject_id, self.sample_rate
            )));
        }
        if self.static_phase.is_empty() || self.stimulation_phase.is_empty() {
            return Err(Error::Signal(format!(
                "subject {}: both phases must be non-empty",
                self.subject_id
            )));
        }
        for (name, phase) in [
            ("static", &self.static_phase),
            ("stimulation", &self.stimulation_phase),
        ] {
            if !phase.iter().all(|v| v.is_finite()) {
                return Err(Error::Signal(format!(
                    "subject {}: non-finite sample in {name} phase",
                    self.subject_id
                )));
            }
        }
        Ok(())
    }
}

/// A (features x windows) matrix with its feature-name row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Tensor,
    feature_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(values: Tensor, feature_names: Vec<String>) -> Result<Self> {
        match values.shape() {
            [d, _] if *d == feature_names.len() => Ok(Self {
                values,
                feature_names,
            }),
            s => Err(Error::Shape(format!(
                "feature matrix shape {s:?} does not match {} names",
                feature_names.len()
            ))),
        }
    }

    /// A matrix whose rows are anonymous channels ("ch0", "ch1", ...).
    pub fn from_channels(values: Tensor) -> Result<Self> {
        let d = match values.shape() {
            [d, _] => *d,
            s => return Err(Error::Shape(format!("expected rank 2, got {s:?}"))),
        };
        let names = (0..d).map(|i| format!("ch{i}")).collect();
        Self::new(values, names)
    }

    pub fn dm(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn t(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, d: usize) -> &[f64] {
        let t = self.t();
        &self.values.data()[d * t..(d + 1) * t]
    }

    /// Min-max normalizes every feature row to [0, 1] in place; constant
    /// rows map to 0.5.
    pub fn minmax_normalize(&mut self) {
        let (d, t) = (self.dm(), self.t());
        let data = self.values.data_mut();
        for di in 0..d {
            let row = &mut data[di * t..(di + 1) * t];
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                for v in row.iter_mut() {
                    *v = (*v - lo) / (hi - lo);
                }
            } else {
                for v in row.iter_mut() {
                    *v = 0.5;
                }
            }
        }
    }
}

/// Subtracts the mean of the static phase from every stimulation sample.
pub fn baseline_subtract(stimulation: &[f64], static_phase: &[f64]) -> Result<Vec<f64>> {
    if static_phase.is_empty() {
        return Err(Error::Signal("static phase is empty".into()));
    }
    let baseline = static_phase.iter().sum::<f64>() / static_phase.len() as f64;
    Ok(stimulation.iter().map(|v| v - baseline).collect())
}

/// Outcome bookkeeping of one subject's feature extraction.
#[derive(Debug, Clone, Default)]
pub struct ExtractionSummary {
    pub windows_used: usize,
    pub windows_filled: usize,
}

/// Runs the full preprocessing pipeline on one recording.
pub fn build_feature_matrix(recording: &RawRecording) -> Result<FeatureMatrix> {
    build_feature_matrix_with_summary(recording).map(|(m, _)| m)
}

pub fn build_feature_matrix_with_summary(
    recording: &RawRecording,
) -> Result<(FeatureMatrix, ExtractionSummary)> {
    recording.validate()?;
    let fs = recording.sample_rate;
    let filtered_stim = bandpass_filter(&recording.stimulation_phase, fs)?;
    let filtered_static = bandpass_filter(&recording.static_phase, fs)?;
    let signal = baseline_subtract(&filtered_stim, &filtered_static)?;

    let ranges = segment_windows(
        signal.len(),
        fs,
        windows::WINDOW_SECONDS,
        windows::WINDOW_OVERLAP,
        WINDOWS_PER_RECORDING,
    )?;

    let mut per_window: Vec<Option<Vec<f64>>> = Vec::with_capacity(ranges.len());
    for (w, range) in ranges.iter().enumerate() {
        let slice = &signal[range.clone()];
        let feats =
            detect_beats(slice, fs).and_then(|beats| extract_window_features(slice, &beats, fs));
        match feats {
            Ok(v) => per_window.push(Some(v)),
            Err(e) => {
                warn!(
                    "subject {}: window {w} failed ({e}); will fill from nearest valid window",
                    recording.subject_id
                );
                per_window.push(None);
            }
        }
    }
    if per_window.iter().all(|w| w.is_none()) {
        return Err(Error::BeatDetection(format!(
            "subject {}: no window produced usable beats",
            recording.subject_id
        )));
    }
    // Fill failures from the nearest valid window: previous first, else next.
    let mut filled = 0usize;
    let snapshot = per_window.clone();
    for w in 0..per_window.len() {
        if per_window[w].is_some() {
            continue;
        }
        filled += 1;
        let prev = snapshot[..w].iter().rev().flatten().next();
        let next = snapshot[w + 1..].iter().flatten().next();
        per_window[w] = prev.or(next).cloned();
    }

    let t = per_window.len();
    let mut data = vec![0.0; FEATURE_COUNT * t];
    for (w, feats) in per_window.iter().enumerate() {
        let feats = feats.as_ref().expect("all windows filled");
        for (d, v) in feats.iter().enumerate() {
            data[d * t + w] = *v;
        }
    }
    let mut matrix = FeatureMatrix::new(
        Tensor::new(vec![FEATURE_COUNT, t], data)?,
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    )?;
    matrix.minmax_normalize();
    Ok((
        matrix,
        ExtractionSummary {
            windows_used: t,
            windows_filled: filled,
        },
    ))
}

// --- file formats -----------------------------------------------------------

fn parse_series(line: &str, path: &str, what: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::data(path, format!("bad {what} sample {tok:?}")))
        })
        .collect()
}

/// Reads a subject file: line 1 `fs=<Hz>`, line 2 static samples, line 3
/// stimulation samples (space separated decimals).
pub fn read_raw_recording(path: &Path) -> Result<RawRecording> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let mut next_line = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::data(&display, format!("missing {what} line")))?
            .map_err(|e| Error::io(&display, e))
    };
    let header = next_line("fs header")?;
    let fs = header
        .strip_prefix("fs=")
        .ok_or_else(|| Error::data(&display, "first line must be fs=<Hz>"))?
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::data(&display, "unparseable sample rate"))?;
    let static_phase = parse_series(&next_line("static phase")?, &display, "static")?;
    let stimulation_phase =
        parse_series(&next_line("stimulation phase")?, &display, "stimulation")?;
    let subject_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".into());
    let rec = RawRecording {
        subject_id,
        sample_rate: fs,
        static_phase,
        stimulation_phase,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn write_raw_recording(path: &Path, rec: &RawRecording) -> Result<()> {
    let display = path.display().to_string();
    let mut out = String::new();
    out.push_str(&format!("fs={}\n", rec.sample_rate));
    for phase in [&rec.static_phase, &rec.stimulation_phase] {
        let mut first = true;
        for v in phase {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(&display, e))
}

/// Writes a feature file: header line of comma-separated feature names, then
/// one line per feature with the window values space separated.
pub fn write_feature_file(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |s: &str| -> Result<()> {
        w.write_all(s.as_bytes())
            .map_err(|e| Error::io(&display, e))
    };
    emit(&matrix.feature_names().join(","))?;
    emit("\n")?;
    for d in 0..matrix.dm() {
        let row: Vec<String> = matrix.row(d).iter().map(|v| format!("{v}")).collect();
        emit(&row.join(" "))?;
        emit("\n")?;
    }
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let mut lines = content.lines();
    let names: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::data(&display, "empty feature file"))?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_series(line, &display, "feature")?);
    }
    if rows.len() != names.len() {
        return Err(Error::data(
            &display,
            format!("{} rows for {} names", rows.len(), names.len()),
        ));
    }
    let t = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != t) {
        return Err(Error::data(&display, "ragged feature rows"));
    }
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    FeatureMatrix::new(Tensor::new(vec![names.len(), t], data)?, names)
}
