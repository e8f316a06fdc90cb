//! Binary-level integration: the documented command flow, exit codes, and
//! byte reproducibility of file outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tnanet"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("spawn")
        .status
        .code()
        .unwrap_or(-1)
}

struct Flow {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    raw: PathBuf,
    features: PathBuf,
    run: PathBuf,
}

fn prepared_flow() -> Flow {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let features = dir.path().join("features");
    let run = dir.path().join("run");
    let raw_s = raw.display().to_string();
    run_ok(&[
        "synth",
        "--out-dir",
        &raw_s,
        "--n",
        "12",
        "--class",
        "positive",
        "--seed",
        "1",
    ]);
    run_ok(&[
        "synth",
        "--out-dir",
        &raw_s,
        "--n",
        "10",
        "--class",
        "negative",
        "--seed",
        "2",
    ]);
    run_ok(&[
        "synth",
        "--out-dir",
        &raw_s,
        "--n",
        "12",
        "--class",
        "negative",
        "--seed",
        "3",
        "--prefix",
        "un",
    ]);
    run_ok(&[
        "preprocess",
        "--raw-dir",
        &raw_s,
        "--out-dir",
        &features.display().to_string(),
    ]);
    Flow {
        dir,
        raw,
        features,
        run,
    }
}

fn read_tree(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut files = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for entry in std::fs::read_dir(&p).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(
                    path.strip_prefix(root).unwrap().display().to_string(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    files
}

#[test]
fn full_ppg_flow_synth_preprocess_run_rank_features() {
    let flow = prepared_flow();
    assert_eq!(std::fs::read_dir(&flow.features).unwrap().count(), 34);

    let out = run_ok(&[
        "run",
        "--mode",
        "ppg",
        "--data",
        &flow.features.display().to_string(),
        "--out",
        &flow.run.display().to_string(),
        "--seed",
        "11",
        "--jobs",
        "4",
    ]);
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("stage1: accuracy"), "{report}");
    assert!(report.contains("stage2: accuracy"), "{report}");
    let rep = flow.run.join("rep0");
    for file in [
        "folds_stage1.txt",
        "fold_metrics_stage1.txt",
        "fold_predictions_stage1.txt",
        "accumulated_stage1.txt",
        "noise_report.txt",
        "folds_stage2.txt",
        "accumulated_stage2.txt",
        "rank.txt",
        "model_stage1.tnanet",
        "model_stage2.tnanet",
    ] {
        assert!(rep.join(file).exists(), "missing {file}");
    }

    let out = run_ok(&["rank", "--run-dir", &flow.run.display().to_string()]);
    let rank_text = String::from_utf8_lossy(&out.stdout);
    assert!(rank_text.contains("overall_average"), "{rank_text}");
    assert!(rank_text.contains("within_top_200"), "{rank_text}");

    let table_path = flow.run.join("importance.txt");
    let out = run_ok(&[
        "features",
        "--checkpoint",
        &rep.join("model_stage2.tnanet").display().to_string(),
        "--out",
        &table_path.display().to_string(),
    ]);
    let table = String::from_utf8_lossy(&out.stdout);
    // 38 features plus the header line, names from the canonical list.
    assert_eq!(table.lines().count(), 39, "{table}");
    assert!(table.contains("SDNN"));
    assert!(table_path.exists());

    // rank --top override flips the verdict line.
    let out = run_ok(&[
        "rank",
        "--run-dir",
        &flow.run.display().to_string(),
        "--top",
        "1",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("within_top_1"));
}

#[test]
fn preprocess_reruns_byte_identical_and_reports_failures() {
    let flow = prepared_flow();
    let first = read_tree(&flow.features);
    run_ok(&[
        "preprocess",
        "--raw-dir",
        &flow.raw.display().to_string(),
        "--out-dir",
        &flow.features.display().to_string(),
    ]);
    let second = read_tree(&flow.features);
    assert_eq!(first, second, "preprocess must be byte-reproducible");

    // A truncated recording fails with exit 1 while the others succeed.
    let bad = flow.raw.join("tn999.txt");
    std::fs::write(&bad, "fs=100\n0.0 1.0 2.0\n3.0 4.0 5.0\n").unwrap();
    let code = exit_code(&[
        "preprocess",
        "--raw-dir",
        &flow.raw.display().to_string(),
        "--out-dir",
        &flow.features.display().to_string(),
    ]);
    assert_eq!(code, 1);
    let third = read_tree(&flow.features);
    assert_eq!(first.len(), third.len(), "good files still produced");
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.txt");
    let mut lines = String::new();
    for i in 0..18 {
        lines.push_str(&format!("{};{},{},{},{}\n", i % 2, i, i + 1, i + 2, i + 3));
    }
    std::fs::write(&data, lines).unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "mode = public\ndata = {}\nout = {}\nseed = 3\nmax_epochs = 5\nn_folds = 3\n",
            data.display(),
            dir.path().join("out_a").display()
        ),
    )
    .unwrap();
    run_ok(&["run", "--config", &config.display().to_string()]);
    assert!(dir.path().join("out_a/report.txt").exists());

    // The --out flag overrides the config file value, and the ablation flag
    // labels the report with its condition name.
    let out = run_ok(&[
        "run",
        "--config",
        &config.display().to_string(),
        "--out",
        &dir.path().join("out_b").display().to_string(),
        "--disable-self-supervised",
    ]);
    assert!(dir.path().join("out_b/report.txt").exists());
    let echoed = std::fs::read_to_string(dir.path().join("out_b/config.txt")).unwrap();
    assert!(echoed.contains("out_b"), "{echoed}");
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("Without the Phase"), "{report}");

    // Ranking a public-mode run is a mode mismatch (data error, exit 1).
    let out = bin()
        .args([
            "rank",
            "--run-dir",
            &dir.path().join("out_a").display().to_string(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mode mismatch"));
}

#[test]
fn config_errors_exit_2_and_enumerate_problems() {
    let out = bin()
        .args(["run", "--mode", "bogus", "--noise-ratio", "1.7"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["mode", "noise_ratio", "seed", "data"] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }

    // Synth profile violations are config errors too.
    let dir = tempfile::tempdir().unwrap();
    let code = exit_code(&[
        "synth",
        "--out-dir",
        &dir.path().display().to_string(),
        "--n",
        "1",
        "--class",
        "positive",
        "--seed",
        "1",
        "--bpm",
        "300",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // Empty raw dir.
    let code = exit_code(&[
        "preprocess",
        "--raw-dir",
        &dir.path().display().to_string(),
        "--out-dir",
        &dir.path().join("o").display().to_string(),
    ]);
    assert_eq!(code, 1);
    // Corrupt checkpoint.
    let bad = dir.path().join("bad.tnanet");
    std::fs::write(&bad, b"TNAN garbage").unwrap();
    assert_eq!(
        exit_code(&["features", "--checkpoint", &bad.display().to_string()]),
        1
    );
}

#[test]
fn convert_and_run_public_from_ts() {
    let dir = tempfile::tempdir().unwrap();
    let ts = dir.path().join("toy.ts");
    let mut lines = String::from("@problemName toy\n@data\n");
    let mut rng_state = 7u64;
    let mut next = || {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
        ((rng_state >> 33) as f64) / (u32::MAX as f64)
    };
    for i in 0..18 {
        let class = if i % 2 == 0 { "left" } else { "right" };
        let freq = if i % 2 == 0 { 2.0 } else { 4.0 };
        let ch: Vec<String> = (0..2)
            .map(|c| {
                (0..16)
                    .map(|k| {
                        let v = (freq * k as f64 * 0.4 + c as f64).sin() + 0.1 * next();
                        format!("{v:.4}")
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        lines.push_str(&format!("{}:{}:{}\n", ch[0], ch[1], class));
    }
    std::fs::write(&ts, lines).unwrap();
    let internal = dir.path().join("toy.internal");
    run_ok(&[
        "convert",
        "--input",
        &ts.display().to_string(),
        "--output",
        &internal.display().to_string(),
    ]);
    let content = std::fs::read_to_string(&internal).unwrap();
    assert_eq!(content.lines().count(), 18);
    run_ok(&[
        "run",
        "--mode",
        "public",
        "--data",
        &internal.display().to_string(),
        "--out",
        &dir.path().join("run").display().to_string(),
        "--seed",
        "4",
        "--n-folds",
        "3",
        "--max-epochs",
        "5",
    ]);
    assert!(dir.path().join("run/rep0/fold_metrics_stage2.txt").exists());

    // A public-mode checkpoint reports channel-indexed feature rows.
    let out = run_ok(&[
        "features",
        "--checkpoint",
        &dir.path()
            .join("run/rep0/model_stage2.tnanet")
            .display()
            .to_string(),
    ]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(table.contains("ch0") && table.contains("ch1"));
}

#[test]
fn synth_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for target in [&a, &b] {
        run_ok(&[
            "synth",
            "--out-dir",
            &target.display().to_string(),
            "--n",
            "2",
            "--class",
            "negative",
            "--seed",
            "9",
            "--duration",
            "30",
        ]);
    }
    assert_eq!(read_tree(&a), read_tree(&b));
}
