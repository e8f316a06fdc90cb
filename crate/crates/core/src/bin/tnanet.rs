//! Command-line front end: preprocess raw recordings, run two-stage
//! experiments, audit noise rankings, report feature importance, generate
//! synthetic cohorts, and convert public archives.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tnanet::checkpoint::{load_checkpoint_file, save_checkpoint_file};
use tnanet::config::{parse_key_values, RunConfig, RunMode};
use tnanet::error::{Error, Result};
use tnanet::manifest;
use tnanet::model::{feature_importance, HyperParams};
use tnanet::pipeline::{
    self, load_ppg_partition, pick_heldout, rank_uncertain, two_stage_ppg, two_stage_public,
    FoldQuotas, NoiseInjectionConfig, PpgRunOptions, PublicRunOptions, SynthProfile,
    TwoStageResult,
};
use tnanet::ppg::{
    build_feature_matrix_with_summary, read_raw_recording, write_feature_file, write_raw_recording,
};
use tnanet::rng::subseed;

#[derive(Parser)]
#[command(
    name = "tnanet",
    version,
    about = "Noise-aware time-series classification pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw recordings into normalized feature files.
    Preprocess {
        /// Directory of raw subject files (<id>.txt).
        #[arg(long)]
        raw_dir: PathBuf,
        /// Output directory for <id>.features files.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Execute a (two-stage) cross-validation experiment.
    Run(RunArgs),
    /// Print the held-out ranking tables of a finished run.
    Rank {
        /// Run directory written by `run`.
        #[arg(long)]
        run_dir: PathBuf,
        /// Rank threshold for the pass/fail line.
        #[arg(long, default_value_t = 200)]
        top: usize,
    },
    /// Rank features by mean absolute first-block convolution weight.
    Features {
        /// Model checkpoint (.tnanet).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic raw recordings.
    Synth(SynthArgs),
    /// Convert a .ts archive into the internal dataset format.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file of key = value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides (flags win over the config file).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_folds: Option<usize>,
    #[arg(long)]
    noise_ratio: Option<f64>,
    #[arg(long)]
    noise_mode: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    h1: Option<usize>,
    #[arg(long)]
    h2: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long, action = clap::ArgAction::SetTrue)]
    disable_self_supervised: bool,
    #[arg(long, action = clap::ArgAction::SetTrue)]
    self_supervised_un_only: bool,
    #[arg(long, action = clap::ArgAction::SetTrue)]
    skip_cl: bool,
    #[arg(long, action = clap::ArgAction::SetTrue)]
    dbn_sigmoid: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of subjects to generate.
    #[arg(long)]
    n: usize,
    /// Generator profile: positive (low variability) or negative.
    #[arg(long)]
    class: String,
    #[arg(long)]
    seed: u64,
    /// Stimulation-phase duration in seconds.
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    #[arg(long, default_value_t = 100.0)]
    fs: f64,
    #[arg(long)]
    bpm: Option<f64>,
    #[arg(long)]
    bpm_std: Option<f64>,
    #[arg(long)]
    hrv: Option<f64>,
    /// Subject-id prefix (defaults to tp/tn by class).
    #[arg(long)]
    prefix: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess { raw_dir, out_dir } => cmd_preprocess(&raw_dir, &out_dir),
        Command::Run(args) => cmd_run(args),
        Command::Rank { run_dir, top } => cmd_rank(&run_dir, top),
        Command::Features { checkpoint, out } => cmd_features(&checkpoint, out.as_deref()),
        Command::Synth(args) => cmd_synth(args),
        Command::Convert { input, output } => cmd_convert(&input, &output),
    }
}

fn cmd_preprocess(raw_dir: &Path, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(raw_dir)
        .map_err(|e| Error::io(raw_dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "txt")
                && !p
                    .file_name()
                    .is_some_and(|n| n.to_string_lossy().ends_with("_truth.txt"))
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::data(
            raw_dir.display().to_string(),
            "no raw .txt recordings found",
        ));
    }
    let mut failures = 0usize;
    for path in entries {
        match read_raw_recording(&path).and_then(|rec| {
            build_feature_matrix_with_summary(&rec).map(|out| (rec.subject_id.clone(), out))
        }) {
            Ok((id, (matrix, summary))) => {
                let target = out_dir.join(format!("{id}.features"));
                write_feature_file(&target, &matrix)?;
                println!(
                    "{id}: {} windows, {} filled from neighbors",
                    summary.windows_used, summary.windows_filled
                );
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    if failures > 0 {
        return Err(Error::Pipeline(format!(
            "{failures} recording(s) failed preprocessing"
        )));
    }
    Ok(())
}

fn effective_config(args: &RunArgs) -> Result<RunConfig> {
    let mut map: BTreeMap<String, String> = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            parse_key_values(&text)?
        }
        None => BTreeMap::new(),
    };
    let mut put = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    };
    put("mode", args.mode.clone());
    put("data", args.data.as_ref().map(|p| p.display().to_string()));
    put("out", args.out.as_ref().map(|p| p.display().to_string()));
    put("seed", args.seed.map(|v| v.to_string()));
    put("n_folds", args.n_folds.map(|v| v.to_string()));
    put("noise_ratio", args.noise_ratio.map(|v| v.to_string()));
    put("noise_mode", args.noise_mode.clone());
    put("repetitions", args.repetitions.map(|v| v.to_string()));
    put("jobs", args.jobs.map(|v| v.to_string()));
    put("lr", args.lr.map(|v| v.to_string()));
    put("max_epochs", args.max_epochs.map(|v| v.to_string()));
    put("h1", args.h1.map(|v| v.to_string()));
    put("h2", args.h2.map(|v| v.to_string()));
    put("filters", args.filters.map(|v| v.to_string()));
    for (key, flag) in [
        ("disable_self_supervised", args.disable_self_supervised),
        ("self_supervised_un_only", args.self_supervised_un_only),
        ("skip_cl", args.skip_cl),
        ("dbn_sigmoid", args.dbn_sigmoid),
    ] {
        if flag {
            map.insert(key.to_string(), "true".to_string());
        }
    }
    RunConfig::from_map(&map)
}

fn hyperparams_for(config: &RunConfig, dm: usize, t: usize) -> Result<HyperParams> {
    let mut hp = HyperParams::for_input(config.dm.unwrap_or(dm), config.t.unwrap_or(t))?;
    if let (Some(h1), Some(h2)) = (config.h1, config.h2) {
        hp = hp.with_widths(h1, h2)?;
    } else if config.h1.is_some() || config.h2.is_some() {
        return Err(Error::Config(
            "h1 and h2 must be overridden together".into(),
        ));
    }
    if let Some(f) = config.filters {
        hp.filters = f;
    }
    hp.lr = config.lr;
    hp.max_epochs = config.max_epochs;
    hp.dbn_sigmoid = config.dbn_sigmoid;
    hp.validate()?;
    Ok(hp)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = effective_config(&args)?;
    std::fs::create_dir_all(&config.out)
        .map_err(|e| Error::io(config.out.display().to_string(), e))?;
    manifest::write_text(&config.out.join("config.txt"), &config.echo())?;
    let mut report = String::new();
    report.push_str(&config.echo());
    report.push('\n');
    match config.mode {
        RunMode::Ppg => run_ppg(&config, &mut report)?,
        RunMode::Public => run_public(&config, &mut report)?,
    }
    manifest::write_text(&config.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn save_stage_models(dir: &Path, result: &TwoStageResult) -> Result<()> {
    if let Some(model) = &result.stage1.last_fold_model {
        save_checkpoint_file(&dir.join("model_stage1.tnanet"), model)?;
    }
    if let Some(model) = result
        .stage2
        .as_ref()
        .and_then(|s| s.last_fold_model.as_ref())
    {
        save_checkpoint_file(&dir.join("model_stage2.tnanet"), model)?;
    }
    Ok(())
}

fn run_ppg(config: &RunConfig, report: &mut String) -> Result<()> {
    let partition = load_ppg_partition(&config.data)?;
    let first = partition
        .samples
        .values()
        .next()
        .ok_or_else(|| Error::Pipeline("empty partition".into()))?;
    let hp = hyperparams_for(config, first.dm(), first.t())?;
    let quotas = FoldQuotas::default();
    for rep in 0..config.repetitions {
        let heldout = pick_heldout(&partition, config.seed, rep, quotas.heldout_tp)?;
        let opts = PpgRunOptions {
            hp,
            n_folds: config.n_folds,
            seed: subseed(config.seed, &format!("rep{rep}")),
            heldout: heldout.clone(),
            quotas,
            self_supervision: config.self_supervision(),
            skip_cl: config.skip_cl,
            jobs: config.jobs,
        };
        let result = two_stage_ppg(&partition, &opts)?;
        // Stage-1 ranking covers the full uncertain pool; the stage-2 table
        // covers the survivors.
        let rank1 = rank_uncertain(&result.stage1, &partition.un_ids, &heldout)?;
        let rank2 = result
            .stage2
            .as_ref()
            .map(|s| rank_uncertain(s, &result.surviving_pool, &heldout))
            .transpose()?;
        let dir = manifest::rep_dir(&config.out, rep);
        manifest::write_repetition(&dir, &result, Some(&rank1), rank2.as_ref())?;
        save_stage_models(&dir, &result)?;
        report.push_str(&format!(
            "repetition {rep} (condition: {})\n",
            config.condition_name()
        ));
        report.push_str(&manifest::render_summary(config, &result));
        let ranks: Vec<String> = rank1
            .heldout_ranks
            .iter()
            .map(|(id, r)| format!("{id}={r}"))
            .collect();
        report.push_str(&format!(
            "heldout_ranks: {} (average {})\n\n",
            ranks.join(" "),
            rank1.average_rank
        ));
    }
    Ok(())
}

fn run_public(config: &RunConfig, report: &mut String) -> Result<()> {
    let partition = pipeline::read_public_dataset(&config.data)?;
    let first = &partition.samples[&partition.ids[0]];
    let hp = hyperparams_for(config, first.dm(), first.t())?;
    let opts = PublicRunOptions {
        hp,
        n_folds: config.n_folds,
        seed: config.seed,
        noise: NoiseInjectionConfig {
            ratio: config.noise_ratio,
            mode: config.noise_mode,
            seed: config.seed,
        },
        self_supervision: config.self_supervision(),
        skip_cl: config.skip_cl,
        jobs: config.jobs,
    };
    let (result, split) = two_stage_public(&partition, &opts)?;
    let dir = manifest::rep_dir(&config.out, 0);
    manifest::write_repetition(&dir, &result, None, None)?;
    save_stage_models(&dir, &result)?;
    let mut noise_lines = String::new();
    noise_lines.push_str(&format!(
        "noisy_segment: {} samples, {} flipped\n",
        split.noisy_ids.len(),
        split.flipped_ids.len()
    ));
    noise_lines.push_str(&format!("flipped: {}\n", split.flipped_ids.join(" ")));
    manifest::write_text(&dir.join("noise_injection.txt"), &noise_lines)?;
    report.push_str("repetition 0\n");
    report.push_str(&manifest::render_summary(config, &result));
    report.push('\n');
    Ok(())
}

fn cmd_rank(run_dir: &Path, top: usize) -> Result<()> {
    let config_text = std::fs::read_to_string(run_dir.join("config.txt"))
        .map_err(|e| Error::io(run_dir.join("config.txt").display().to_string(), e))?;
    let map = parse_key_values(&config_text)?;
    match map.get("mode").map(String::as_str) {
        Some("ppg") => {}
        Some(other) => {
            return Err(Error::data(
                run_dir.display().to_string(),
                format!("mode mismatch: ranking needs a ppg run, found {other:?}"),
            ))
        }
        None => {
            return Err(Error::data(
                run_dir.display().to_string(),
                "config.txt has no mode key",
            ))
        }
    }
    let mut rep = 0usize;
    let mut all_ranks: Vec<usize> = Vec::new();
    let mut rows = String::new();
    loop {
        let rank_path = manifest::rep_dir(run_dir, rep).join("rank.txt");
        if !rank_path.exists() {
            break;
        }
        let parsed = manifest::parse_rank_file(&rank_path)?;
        let stage1 = parsed
            .iter()
            .find(|p| p.stage == 1)
            .ok_or_else(|| Error::data(rank_path.display().to_string(), "no stage-1 block"))?;
        rows.push_str(&format!("repetition {rep}\n"));
        for (id, r) in &stage1.heldout_ranks {
            rows.push_str(&format!("  {id} rank {r}\n"));
            all_ranks.push(*r);
        }
        rows.push_str(&format!("  average {}\n", stage1.average_rank));
        rep += 1;
    }
    if rep == 0 {
        return Err(Error::data(
            run_dir.display().to_string(),
            "no rep*/rank.txt manifests found",
        ));
    }
    let overall = all_ranks.iter().sum::<usize>() as f64 / all_ranks.len() as f64;
    let within = all_ranks.iter().filter(|r| **r < top).count();
    print!("{rows}");
    println!("overall_average {overall}");
    println!(
        "within_top_{top}: {within}/{} -> {}",
        all_ranks.len(),
        if within == all_ranks.len() {
            "yes"
        } else {
            "no"
        }
    );
    Ok(())
}

fn cmd_features(checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let params = load_checkpoint_file(checkpoint)?;
    let ranked = feature_importance(&params);
    let mut table = String::from("rank feature score\n");
    for (i, (name, score)) in ranked.iter().enumerate() {
        table.push_str(&format!("{} {name} {score}\n", i + 1));
    }
    print!("{table}");
    if let Some(path) = out {
        manifest::write_text(path, &table)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut profile = match args.class.as_str() {
        "positive" => SynthProfile::positive(),
        "negative" => SynthProfile::negative(),
        other => {
            return Err(Error::Config(format!(
                "class must be positive or negative, got {other:?}"
            )))
        }
    };
    if let Some(bpm) = args.bpm {
        profile.bpm_mean = bpm;
    }
    if let Some(std) = args.bpm_std {
        profile.bpm_std = std;
    }
    if let Some(hrv) = args.hrv {
        profile.hrv = hrv;
    }
    profile.validate()?;
    let prefix = args
        .prefix
        .clone()
        .unwrap_or_else(|| if profile.class_positive { "tp" } else { "tn" }.to_string());
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    let mut truth_lines = String::from("id n_beats mean_ibi_s std_ibi_s\n");
    for i in 0..args.n {
        let id = format!("{prefix}{i:03}");
        let (rec, truth) = pipeline::generate_synthetic_ppg_with_truth(
            &id,
            &profile,
            args.duration,
            args.fs,
            subseed(args.seed, &format!("{prefix}{i}")),
        )?;
        write_raw_recording(&args.out_dir.join(format!("{id}.txt")), &rec)?;
        let (mean, std) = pipeline::mean_std(&truth.ibis_s);
        truth_lines.push_str(&format!("{id} {} {mean} {std}\n", truth.ibis_s.len()));
    }
    manifest::write_text(
        &args.out_dir.join(format!("{prefix}_truth.txt")),
        &truth_lines,
    )?;
    print!("{truth_lines}");
    Ok(())
}

fn cmd_convert(input: &Path, output: &Path) -> Result<()> {
    let content =
        std::fs::read_to_string(input).map_err(|e| Error::io(input.display().to_string(), e))?;
    let internal = pipeline::convert_ts(&content, &input.display().to_string())?;
    manifest::write_text(output, &internal)?;
    println!(
        "wrote {} samples to {}",
        internal.lines().count(),
        output.display()
    );
    Ok(())
}
