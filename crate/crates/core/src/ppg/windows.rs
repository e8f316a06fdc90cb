//! Overlapping window segmentation.

use crate::error::{Error, Result};

pub const WINDOW_SECONDS: f64 = 20.0;
pub const WINDOW_OVERLAP: f64 = 0.8;
/// Number of windows a full-length recording is clipped to.
pub const WINDOWS_PER_RECORDING: usize = 70;

/// Splits `signal` into `clip_to` windows of `window_s` seconds overlapping
/// by `overlap`, anchored at offsets 0, hop, 2*hop, ... Returns the sample
/// ranges of the kept windows.
pub fn segment_windows(
    signal_len: usize,
    fs: f64,
    window_s: f64,
    overlap: f64,
    clip_to: usize,
) -> Result<Vec<std::ops::Range<usize>>> {
    let win = (window_s * fs).round() as usize;
    let hop = (window_s * (1.0 - overlap) * fs).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::Signal(format!(
            "degenerate window ({win} samples) or hop ({hop} samples)"
        )));
    }
    if signal_len < win {
        return Err(Error::InsufficientWindows {
            found: 0,
            need: clip_to,
        });
    }
    let available = (signal_len - win) / hop + 1;
    if available < clip_to {
        return Err(Error::InsufficientWindows {
            found: available,
            need: clip_to,
        });
    }
    Ok((0..clip_to)
        .map(|i| {
            let start = i * hop;
            start..start + win
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_recording_clips_to_seventy() {
        // 300 s at 100 Hz: floor((30000 - 2000) / 400) + 1 = 71 raw windows.
        let ranges = segment_windows(30_000, 100.0, 20.0, 0.8, 70).unwrap();
        assert_eq!(ranges.len(), 70);
        assert_eq!(ranges[0], 0..2000);
        assert_eq!(ranges[1].start, 400);
        assert_eq!(ranges[69].start, 69 * 400);
    }

    #[test]
    fn exactly_seventy_raw_windows_needs_no_clipping() {
        // 296 s gives floor((29600 - 2000) / 400) + 1 = 70.
        let ranges = segment_windows(29_600, 100.0, 20.0, 0.8, 70).unwrap();
        assert_eq!(ranges.len(), 70);
    }

    #[test]
    fn single_window_signal() {
        let ranges = segment_windows(2000, 100.0, 20.0, 0.8, 1).unwrap();
        assert_eq!(ranges, vec![0..2000]);
    }

    #[test]
    fn truncated_recording_reports_count() {
        // 250 s -> floor((25000 - 2000) / 400) + 1 = 58 < 70.
        let err = segment_windows(25_000, 100.0, 20.0, 0.8, 70).unwrap_err();
        match err {
            Error::InsufficientWindows { found, need } => {
                assert_eq!(found, 58);
                assert_eq!(need, 70);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn window_count_formula_matches_enumeration() {
        let mut rng = crate::rng::seeded_rng(77);
        for _ in 0..50 {
            let len = 2000 + (crate::rng::uniform(&mut rng, 0.0, 40_000.0) as usize);
            let ranges = segment_windows(len, 100.0, 20.0, 0.8, 1).unwrap();
            assert!(!ranges.is_empty());
            // Exhaustive enumeration of valid offsets.
            let mut count = 0usize;
            let mut start = 0usize;
            while start + 2000 <= len {
                count += 1;
                start += 400;
            }
            let formula = (len - 2000) / 400 + 1;
            assert_eq!(formula, count, "len {len}");
        }
    }
}
