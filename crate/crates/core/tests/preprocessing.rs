//! Whole-pipeline preprocessing invariants on synthetic recordings.

use tnanet::error::Error;
use tnanet::pipeline::{generate_synthetic_ppg, SynthProfile};
use tnanet::ppg::build_feature_matrix;

#[test]
fn amplitude_scale_invariance_after_normalization() {
    let rec = generate_synthetic_ppg("s", &SynthProfile::negative(), 300.0, 100.0, 55).unwrap();
    let base = build_feature_matrix(&rec).unwrap();
    for k in [0.5, 2.0, 10.0] {
        let mut scaled = rec.clone();
        scaled.static_phase.iter_mut().for_each(|v| *v *= k);
        scaled.stimulation_phase.iter_mut().for_each(|v| *v *= k);
        let out = build_feature_matrix(&scaled).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in base.values().data().iter().zip(out.values().data()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst <= 1e-6, "scale {k}: max deviation {worst}");
    }
}

#[test]
fn additive_dc_offset_is_invisible() {
    let rec = generate_synthetic_ppg("s", &SynthProfile::negative(), 300.0, 100.0, 56).unwrap();
    let base = build_feature_matrix(&rec).unwrap();
    let mut shifted = rec.clone();
    shifted.static_phase.iter_mut().for_each(|v| *v += 42.0);
    shifted
        .stimulation_phase
        .iter_mut()
        .for_each(|v| *v += 42.0);
    let out = build_feature_matrix(&shifted).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in base.values().data().iter().zip(out.values().data()) {
        worst = worst.max((a - b).abs());
    }
    assert!(worst <= 1e-6, "max deviation {worst}");
}

#[test]
fn truncated_recording_reports_insufficient_windows() {
    let rec = generate_synthetic_ppg("s", &SynthProfile::negative(), 250.0, 100.0, 57).unwrap();
    match build_feature_matrix(&rec) {
        Err(Error::InsufficientWindows { found, need }) => {
            assert_eq!(found, 58, "floor((25000 - 2000) / 400) + 1");
            assert_eq!(need, 70);
        }
        other => panic!("expected insufficient-windows error, got {other:?}"),
    }
}

#[test]
fn beat_annotations_interleave_on_every_window() {
    use tnanet::ppg::{bandpass_filter, detect_beats, segment_windows};
    let rec = generate_synthetic_ppg("s", &SynthProfile::positive(), 300.0, 100.0, 58).unwrap();
    let filtered = bandpass_filter(&rec.stimulation_phase, 100.0).unwrap();
    let ranges = segment_windows(filtered.len(), 100.0, 20.0, 0.8, 70).unwrap();
    let mut processed = 0;
    for r in ranges {
        if let Ok(beats) = detect_beats(&filtered[r], 100.0) {
            beats.validate().unwrap();
            processed += 1;
        }
    }
    assert!(processed >= 68, "only {processed}/70 windows processed");
}
