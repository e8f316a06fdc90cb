//! Run-directory manifests.
//!
//! Every number a run reports is recomputable from these plain-text files:
//! fold plans, per-fold predictions, accumulated averages, the noise report,
//! and per-stage metrics. Ordering is deterministic so identical runs
//! produce byte-identical directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::confidence::render_noise_report;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::metrics::mean_std;
use crate::pipeline::run::{CvResult, RankTable, TwoStageResult};
use crate::pipeline::FoldPlan;

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn render_folds(folds: &[FoldPlan]) -> String {
    let mut s = String::new();
    for plan in folds {
        let _ = writeln!(s, "fold {} seed {}", plan.fold_index, plan.seed);
        let _ = writeln!(s, "  heldout: {}", plan.heldout_tp_ids.join(" "));
        let _ = writeln!(s, "  test: {}", plan.test_ids.join(" "));
        let train: Vec<String> = plan
            .train
            .iter()
            .map(|(id, y)| format!("{id}:{y}"))
            .collect();
        let _ = writeln!(s, "  train: {}", train.join(" "));
    }
    s
}

pub fn render_fold_metrics(cv: &CvResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "fold accuracy f1 epochs");
    for (i, m) in cv.fold_metrics.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {}", m.accuracy, m.f1, cv.fold_epochs[i]);
    }
    let (acc_m, acc_s) = mean_std(
        &cv.fold_metrics
            .iter()
            .map(|m| m.accuracy)
            .collect::<Vec<_>>(),
    );
    let (f1_m, f1_s) = mean_std(&cv.fold_metrics.iter().map(|m| m.f1).collect::<Vec<_>>());
    let _ = writeln!(s, "mean_accuracy {acc_m} std_accuracy {acc_s}");
    let _ = writeln!(s, "mean_f1 {f1_m} std_f1 {f1_s}");
    s
}

pub fn render_fold_predictions(cv: &CvResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "fold id p0 p1 in_training");
    for log in &cv.fold_predictions {
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            log.fold, log.id, log.p[0], log.p[1], log.in_training
        );
    }
    s
}

pub fn render_accumulated(cv: &CvResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "id count p0 p1");
    for (id, acc) in &cv.accum {
        let m = acc.mean();
        let _ = writeln!(s, "{id} {} {} {}", acc.count, m.p[0], m.p[1]);
    }
    for (id, acc) in &cv.assess {
        let m = acc.mean();
        let _ = writeln!(s, "{id} {} {} {} in_training", acc.count, m.p[0], m.p[1]);
    }
    s
}

pub fn render_rank(table: &RankTable, stage: u8) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "stage {stage} ranking over {} candidates",
        table.entries.len()
    );
    let _ = writeln!(s, "rank id p_positive heldout");
    for (rank, e) in table.entries.iter().enumerate() {
        let _ = writeln!(
            s,
            "{rank} {} {} {}",
            e.id,
            e.p_positive,
            if e.is_heldout { "yes" } else { "-" }
        );
    }
    let pairs: Vec<String> = table
        .heldout_ranks
        .iter()
        .map(|(id, r)| format!("{id}={r}"))
        .collect();
    let _ = writeln!(s, "heldout_ranks: {}", pairs.join(" "));
    let _ = writeln!(s, "average_rank: {}", table.average_rank);
    s
}

/// Writes every stage artifact of one repetition into `dir`.
pub fn write_repetition(
    dir: &Path,
    result: &TwoStageResult,
    rank1: Option<&RankTable>,
    rank2: Option<&RankTable>,
) -> Result<()> {
    write_text(&dir.join("folds_stage1.txt"), &render_folds(&result.folds1))?;
    write_text(
        &dir.join("fold_metrics_stage1.txt"),
        &render_fold_metrics(&result.stage1),
    )?;
    write_text(
        &dir.join("fold_predictions_stage1.txt"),
        &render_fold_predictions(&result.stage1),
    )?;
    write_text(
        &dir.join("accumulated_stage1.txt"),
        &render_accumulated(&result.stage1),
    )?;
    if let Some(cl) = &result.cl {
        let mut report = String::new();
        let _ = writeln!(
            report,
            "thresholds: t0 {} t1 {}",
            cl.thresholds.t0, cl.thresholds.t1
        );
        report.push_str(&render_noise_report(&cl.counts, &cl.q, &cl.filter));
        let _ = writeln!(
            report,
            "surviving_pool: {}",
            result.surviving_pool.join(" ")
        );
        write_text(&dir.join("noise_report.txt"), &report)?;
    }
    if let (Some(stage2), Some(folds2)) = (&result.stage2, &result.folds2) {
        write_text(&dir.join("folds_stage2.txt"), &render_folds(folds2))?;
        write_text(
            &dir.join("fold_metrics_stage2.txt"),
            &render_fold_metrics(stage2),
        )?;
        write_text(
            &dir.join("fold_predictions_stage2.txt"),
            &render_fold_predictions(stage2),
        )?;
        write_text(
            &dir.join("accumulated_stage2.txt"),
            &render_accumulated(stage2),
        )?;
    }
    let mut rank_text = String::new();
    if let Some(t) = rank1 {
        rank_text.push_str(&render_rank(t, 1));
    }
    if let Some(t) = rank2 {
        rank_text.push_str(&render_rank(t, 2));
    }
    if !rank_text.is_empty() {
        write_text(&dir.join("rank.txt"), &rank_text)?;
    }
    Ok(())
}

pub fn stage_summary_line(label: &str, cv: &CvResult) -> String {
    let (acc_m, acc_s) = mean_std(
        &cv.fold_metrics
            .iter()
            .map(|m| m.accuracy)
            .collect::<Vec<_>>(),
    );
    let (f1_m, f1_s) = mean_std(&cv.fold_metrics.iter().map(|m| m.f1).collect::<Vec<_>>());
    format!("{label}: accuracy {acc_m} +- {acc_s}, f1 {f1_m} +- {f1_s}")
}

/// Per-repetition summary.
pub fn render_summary(config: &RunConfig, result: &TwoStageResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "condition: {}", config.condition_name());
    let _ = writeln!(s, "{}", stage_summary_line("stage1", &result.stage1));
    if let Some(stage2) = &result.stage2 {
        let _ = writeln!(s, "{}", stage_summary_line("stage2", stage2));
    }
    if let Some(cl) = &result.cl {
        let _ = writeln!(s, "n_noise: {}", cl.filter.n_noise);
        let _ = writeln!(
            s,
            "q: {} {} {} {}",
            cl.q[0][0], cl.q[0][1], cl.q[1][0], cl.q[1][1]
        );
    }
    let _ = writeln!(s, "surviving_pool_size: {}", result.surviving_pool.len());
    s
}

pub fn rep_dir(out: &Path, rep: usize) -> PathBuf {
    out.join(format!("rep{rep}"))
}

/// Parsed view of one stage block of a rank.txt file.
#[derive(Debug, Clone)]
pub struct ParsedRank {
    pub stage: u8,
    pub pool_size: usize,
    pub heldout_ranks: Vec<(String, usize)>,
    pub average_rank: f64,
}

pub fn parse_rank_file(path: &Path) -> Result<Vec<ParsedRank>> {
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let mut out: Vec<ParsedRank> = Vec::new();
    for line in content.lines() {
        if let Some(rest) = line.strip_prefix("stage ") {
            let mut it = rest.split_whitespace();
            let stage: u8 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::data(&display, "bad stage header"))?;
            let pool_size: usize = rest
                .split_whitespace()
                .rev()
                .nth(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::data(&display, "bad pool size"))?;
            out.push(ParsedRank {
                stage,
                pool_size,
                heldout_ranks: Vec::new(),
                average_rank: 0.0,
            });
        } else if let Some(rest) = line.strip_prefix("heldout_ranks: ") {
            let cur = out
                .last_mut()
                .ok_or_else(|| Error::data(&display, "ranks before stage header"))?;
            for pair in rest.split_whitespace() {
                let (id, r) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::data(&display, format!("bad rank pair {pair:?}")))?;
                let rank: usize = r
                    .parse()
                    .map_err(|_| Error::data(&display, format!("bad rank {r:?}")))?;
                cur.heldout_ranks.push((id.to_string(), rank));
            }
        } else if let Some(rest) = line.strip_prefix("average_rank: ") {
            let cur = out
                .last_mut()
                .ok_or_else(|| Error::data(&display, "average before stage header"))?;
            cur.average_rank = rest
                .trim()
                .parse()
                .map_err(|_| Error::data(&display, format!("bad average {rest:?}")))?;
        }
    }
    if out.is_empty() {
        return Err(Error::data(&display, "no ranking blocks found"));
    }
    Ok(out)
}
