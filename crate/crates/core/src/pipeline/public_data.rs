//! Public-dataset file formats.
//!
//! The internal format is one sample per line,
//! `label;ch1_v1,ch1_v2,...;ch2_v1,...` — semicolon-separated channels,
//! comma-separated values. The converter reads the common `.ts` archive
//! layout (header lines starting with `@` or `#`, then one series per line
//! with channels separated by `:` and the class label last).

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::partition::PublicPartition;
use crate::ppg::FeatureMatrix;
use crate::tensor::Tensor;

fn parse_values(tok: &str, path: &str) -> Result<Vec<f64>> {
    tok.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::data(path, format!("bad value {v:?}")))
        })
        .collect()
}

/// Reads the internal one-line-per-sample format. Channel rows are min-max
/// normalized per sample, matching the preprocessing convention.
pub fn read_public_dataset(path: &Path) -> Result<PublicPartition> {
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    parse_public_dataset(&content, &display)
}

pub fn parse_public_dataset(content: &str, origin: &str) -> Result<PublicPartition> {
    let mut ids = Vec::new();
    let mut labels = BTreeMap::new();
    let mut samples = BTreeMap::new();
    let mut expect_dims: Option<(usize, usize)> = None;
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(';');
        let label_tok = parts
            .next()
            .ok_or_else(|| Error::data(origin, format!("line {}: empty", lineno + 1)))?;
        let label: u8 = label_tok.trim().parse().map_err(|_| {
            Error::data(
                origin,
                format!("line {}: bad label {label_tok:?}", lineno + 1),
            )
        })?;
        if label > 1 {
            return Err(Error::data(
                origin,
                format!("line {}: label {label} out of range", lineno + 1),
            ));
        }
        let mut channels: Vec<Vec<f64>> = Vec::new();
        for tok in parts {
            channels.push(parse_values(tok, origin)?);
        }
        if channels.is_empty() {
            return Err(Error::data(
                origin,
                format!("line {}: no channels", lineno + 1),
            ));
        }
        let t = channels[0].len();
        if channels.iter().any(|c| c.len() != t) {
            return Err(Error::data(
                origin,
                format!("line {}: ragged channel lengths", lineno + 1),
            ));
        }
        match expect_dims {
            None => expect_dims = Some((channels.len(), t)),
            Some(d) if d != (channels.len(), t) => {
                return Err(Error::data(
                    origin,
                    format!(
                        "line {}: sample shape ({}, {t}) differs from first sample {:?}",
                        lineno + 1,
                        channels.len(),
                        d
                    ),
                ))
            }
            _ => {}
        }
        let data: Vec<f64> = channels.into_iter().flatten().collect();
        let (dm, t) = expect_dims.expect("set above");
        let mut m = FeatureMatrix::from_channels(Tensor::new(vec![dm, t], data)?)?;
        m.minmax_normalize();
        let id = format!("s{:04}", ids.len());
        labels.insert(id.clone(), label);
        samples.insert(id.clone(), m);
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(Error::data(origin, "no samples"));
    }
    let p = PublicPartition {
        ids,
        labels,
        samples,
    };
    p.validate()?;
    Ok(p)
}

/// Writes the internal format. Values are the stored (normalized) rows.
pub fn write_public_dataset(path: &Path, partition: &PublicPartition) -> Result<()> {
    let display = path.display().to_string();
    let mut out = String::new();
    for id in &partition.ids {
        let m = &partition.samples[id];
        out.push_str(&partition.labels[id].to_string());
        for d in 0..m.dm() {
            out.push(';');
            let row: Vec<String> = m.row(d).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(&display, e))
}

/// Converts a `.ts`-style archive into the internal format: skips `@`/`#`
/// header lines; a data line is `ch1:ch2:...:label` with comma-separated
/// values per channel. Class labels are mapped to {0, 1} by sorted order of
/// the distinct labels found.
pub fn convert_ts(content: &str, origin: &str) -> Result<String> {
    let mut rows: Vec<(Vec<Vec<f64>>, String)> = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('@') || line.starts_with('#') {
            continue;
        }
        let mut parts: Vec<&str> = line.split(':').collect();
        if parts.len() < 2 {
            return Err(Error::data(
                origin,
                format!("line {}: expected channels and a label", lineno + 1),
            ));
        }
        let label = parts.pop().expect("non-empty").trim().to_string();
        let channels: Vec<Vec<f64>> = parts
            .iter()
            .map(|tok| parse_values(tok, origin))
            .collect::<Result<_>>()?;
        let t = channels[0].len();
        if channels.iter().any(|c| c.len() != t) {
            return Err(Error::data(
                origin,
                format!("line {}: ragged channel lengths", lineno + 1),
            ));
        }
        rows.push((channels, label));
    }
    if rows.is_empty() {
        return Err(Error::data(origin, "no data lines"));
    }
    let mut classes: Vec<String> = rows.iter().map(|(_, l)| l.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() != 2 {
        return Err(Error::data(
            origin,
            format!("need exactly 2 classes, found {:?}", classes),
        ));
    }
    let mut out = String::new();
    for (channels, label) in rows {
        let binary = usize::from(label == classes[1]);
        out.push_str(&binary.to_string());
        for ch in channels {
            out.push(';');
            let vals: Vec<String> = ch.iter().map(|v| format!("{v}")).collect();
            out.push_str(&vals.join(","));
        }
        out.push('\n');
    }
    Ok(out)
}
