//! Cross-validation stages and the two-stage noise-filtering pipeline.
//!
//! A stage trains one fresh model per fold (self-supervised pre-training,
//! then supervised training), credits eval-mode probabilities of every
//! sample outside the fold's training set into a running average, and scores
//! the fold on its test ids. Between the two stages, confidence learning
//! estimates the joint distribution from the reliably labeled pool and
//! prunes the uncertain pool by noise rate.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::confidence::{
    class_thresholds, confidence_joint, joint_distribution, pbnr_filter, pbnr_filter_symmetric,
    ClassThresholds, Group, NoiseFilterResult, SamplePrediction,
};
use crate::error::{Error, Result};
use crate::layers::ProbPair;
use crate::model::{self, predict_label, supervised_train, HyperParams, TnanetParams};
use crate::pipeline::metrics::{mean_std, metrics, Metrics};
use crate::pipeline::partition::{
    split_folds_public, FoldPlan, FoldQuotas, NoiseInjectionConfig, PpgPartition, PublicPartition,
    PublicSplit,
};
use crate::ppg::FeatureMatrix;
use crate::rng::{seeded_rng, subseed};

/// Running mean of accumulated probabilities.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accum {
    pub sum: [f64; 2],
    pub count: u32,
}

impl Accum {
    pub fn add(&mut self, p: &ProbPair) {
        self.sum[0] += p.p[0];
        self.sum[1] += p.p[1];
        self.count += 1;
    }

    pub fn mean(&self) -> ProbPair {
        let c = self.count.max(1) as f64;
        ProbPair::new([self.sum[0] / c, self.sum[1] / c])
    }
}

#[derive(Debug, Clone)]
pub struct FoldPredictionLog {
    pub fold: usize,
    pub id: String,
    pub p: [f64; 2],
    pub in_training: bool,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub stage: u8,
    /// Accumulated averages over folds where the sample was not trained on.
    pub accum: BTreeMap<String, Accum>,
    /// In-training assessment averages (public mode's noisy segment, which
    /// sits inside every fold's training set).
    pub assess: BTreeMap<String, Accum>,
    pub fold_metrics: Vec<Metrics>,
    pub fold_predictions: Vec<FoldPredictionLog>,
    pub fold_epochs: Vec<usize>,
    /// Trained model of the last fold (checkpoint material).
    pub last_fold_model: Option<Box<TnanetParams>>,
}

impl CvResult {
    pub fn mean_accuracy(&self) -> f64 {
        mean_std(
            &self
                .fold_metrics
                .iter()
                .map(|m| m.accuracy)
                .collect::<Vec<_>>(),
        )
        .0
    }

    pub fn mean_f1(&self) -> f64 {
        mean_std(&self.fold_metrics.iter().map(|m| m.f1).collect::<Vec<_>>()).0
    }

    pub fn accumulated(&self, id: &str) -> Result<ProbPair> {
        self.accum
            .get(id)
            .filter(|a| a.count > 0)
            .map(Accum::mean)
            .ok_or_else(|| Error::Pipeline(format!("no accumulated prediction for {id:?}")))
    }
}

/// Which samples feed the encoder's self-supervised phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfSupervision {
    /// The fold's entire training set.
    #[default]
    Full,
    /// The whole uncertain pool (plentiful but carries no reliably labeled
    /// structure; the phase itself never reads labels either way).
    UnOnly,
    /// Skip the phase.
    Disabled,
}

pub struct StageConfig<'a> {
    pub hp: HyperParams,
    pub stage: u8,
    pub self_supervision: SelfSupervision,
    pub jobs: usize,
    pub samples: &'a BTreeMap<String, FeatureMatrix>,
    /// True labels for test scoring.
    pub truth: &'a BTreeMap<String, u8>,
    /// Every id predicted when outside a fold's training set.
    pub predict_ids: &'a [String],
    /// Ids that must end the stage with at least one accumulated prediction.
    pub required_ids: &'a [String],
    /// Ids assessed in-training each fold (empty outside public mode).
    pub assess_ids: &'a [String],
    /// Uncertain-pool membership for the UnOnly ablation.
    pub un_ids: &'a BTreeSet<String>,
}

struct FoldOutput {
    oof: Vec<(String, ProbPair)>,
    assess: Vec<(String, ProbPair)>,
    metrics: Metrics,
    log: Vec<FoldPredictionLog>,
    epochs: usize,
    model: TnanetParams,
}

fn run_fold(plan: &FoldPlan, cfg: &StageConfig) -> Result<FoldOutput> {
    let mut params = TnanetParams::init(cfg.hp, plan.seed)?;
    let train_ids = plan.train_id_set();
    let mats_for = |ids: &[&str]| -> Result<Vec<&FeatureMatrix>> {
        ids.iter()
            .map(|id| {
                cfg.samples
                    .get(*id)
                    .ok_or_else(|| Error::Pipeline(format!("missing matrix for {id:?}")))
            })
            .collect()
    };

    let ss_pool: Vec<&str> = match cfg.self_supervision {
        SelfSupervision::Full => plan.train.iter().map(|(id, _)| id.as_str()).collect(),
        SelfSupervision::UnOnly => cfg.un_ids.iter().map(String::as_str).collect(),
        SelfSupervision::Disabled => Vec::new(),
    };
    if !ss_pool.is_empty() {
        let mats = mats_for(&ss_pool)?;
        let mut rng = seeded_rng(subseed(plan.seed, "selfsup"));
        model::self_supervised_train(&mut params, &mats, &mut rng)?;
    }

    let train_refs: Vec<(&FeatureMatrix, u8)> = plan
        .train
        .iter()
        .map(|(id, y)| {
            cfg.samples
                .get(id)
                .map(|m| (m, *y))
                .ok_or_else(|| Error::Pipeline(format!("missing matrix for {id:?}")))
        })
        .collect::<Result<_>>()?;
    let summary = supervised_train(&mut params, &train_refs)?;

    let mut oof = Vec::new();
    let mut log = Vec::new();
    for id in cfg.predict_ids {
        if train_ids.contains(id.as_str()) {
            continue;
        }
        let m = cfg
            .samples
            .get(id)
            .ok_or_else(|| Error::Pipeline(format!("missing matrix for {id:?}")))?;
        let (_, p) = model::predict(&params, m)?;
        oof.push((id.clone(), p));
        log.push(FoldPredictionLog {
            fold: plan.fold_index,
            id: id.clone(),
            p: p.p,
            in_training: false,
        });
    }
    let mut assess = Vec::new();
    for id in cfg.assess_ids {
        let m = cfg
            .samples
            .get(id)
            .ok_or_else(|| Error::Pipeline(format!("missing matrix for {id:?}")))?;
        let (_, p) = model::predict(&params, m)?;
        assess.push((id.clone(), p));
        log.push(FoldPredictionLog {
            fold: plan.fold_index,
            id: id.clone(),
            p: p.p,
            in_training: true,
        });
    }

    let mut pairs = Vec::with_capacity(plan.test_ids.len());
    for id in &plan.test_ids {
        let m = cfg
            .samples
            .get(id)
            .ok_or_else(|| Error::Pipeline(format!("missing matrix for {id:?}")))?;
        let (_, p) = model::predict(&params, m)?;
        let truth = *cfg
            .truth
            .get(id)
            .ok_or_else(|| Error::Pipeline(format!("missing truth label for {id:?}")))?;
        pairs.push((predict_label(&p), truth));
    }
    Ok(FoldOutput {
        oof,
        assess,
        metrics: metrics(&pairs),
        log,
        epochs: summary.epochs_run,
        model: params,
    })
}

/// Runs every fold of one stage and merges the results in fold order.
pub fn run_stage(folds: &[FoldPlan], cfg: &StageConfig) -> Result<CvResult> {
    if folds.is_empty() {
        return Err(Error::Pipeline("no folds to run".into()));
    }
    let outputs: Vec<Result<FoldOutput>> = if cfg.jobs > 1 {
        // A scoped pool honors the requested width; results merge in fold
        // order below, so parallelism never changes the output.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Pipeline(format!("cannot build thread pool: {e}")))?;
        pool.install(|| folds.par_iter().map(|plan| run_fold(plan, cfg)).collect())
    } else {
        folds.iter().map(|plan| run_fold(plan, cfg)).collect()
    };
    let mut result = CvResult {
        stage: cfg.stage,
        accum: BTreeMap::new(),
        assess: BTreeMap::new(),
        fold_metrics: Vec::with_capacity(folds.len()),
        fold_predictions: Vec::new(),
        fold_epochs: Vec::new(),
        last_fold_model: None,
    };
    for out in outputs {
        let out = out?;
        result.last_fold_model = Some(Box::new(out.model));
        for (id, p) in out.oof {
            result.accum.entry(id).or_default().add(&p);
        }
        for (id, p) in out.assess {
            result.assess.entry(id).or_default().add(&p);
        }
        result.fold_metrics.push(out.metrics);
        result.fold_epochs.push(out.epochs);
        result.fold_predictions.extend(out.log);
    }
    let missing: Vec<&String> = cfg
        .required_ids
        .iter()
        .filter(|id| result.accum.get(*id).is_none_or(|a| a.count == 0))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Pipeline(format!(
            "{} samples never left the training rotation (first few: {:?})",
            missing.len(),
            &missing[..missing.len().min(5)]
        )));
    }
    Ok(result)
}

/// Confidence-learning byproducts of a two-stage run.
#[derive(Debug, Clone)]
pub struct ClOutcome {
    pub thresholds: ClassThresholds,
    pub counts: [[usize; 2]; 2],
    pub q: [[f64; 2]; 2],
    pub filter: NoiseFilterResult,
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub stage1: CvResult,
    pub folds1: Vec<FoldPlan>,
    pub cl: Option<ClOutcome>,
    pub stage2: Option<CvResult>,
    pub folds2: Option<Vec<FoldPlan>>,
    /// The uncertain/noisy pool surviving into stage 2.
    pub surviving_pool: Vec<String>,
}

impl TwoStageResult {
    /// The stage whose accumulated predictions are final.
    pub fn final_stage(&self) -> &CvResult {
        self.stage2.as_ref().unwrap_or(&self.stage1)
    }
}

pub struct PpgRunOptions {
    pub hp: HyperParams,
    pub n_folds: usize,
    pub seed: u64,
    pub heldout: Vec<String>,
    pub quotas: FoldQuotas,
    pub self_supervision: SelfSupervision,
    pub skip_cl: bool,
    pub jobs: usize,
}

fn ppg_truth(partition: &PpgPartition) -> BTreeMap<String, u8> {
    let mut truth = BTreeMap::new();
    for id in &partition.tp_ids {
        truth.insert(id.clone(), 1);
    }
    for id in partition.tn_ids.iter().chain(&partition.un_ids) {
        truth.insert(id.clone(), 0);
    }
    truth
}

fn ppg_stage(
    partition: &PpgPartition,
    opts: &PpgRunOptions,
    stage: u8,
) -> Result<(Vec<FoldPlan>, CvResult)> {
    let folds = crate::pipeline::partition::split_folds_ppg_with_heldout(
        partition,
        opts.n_folds,
        opts.seed,
        &opts.heldout,
        opts.quotas,
    )?;
    let truth = ppg_truth(partition);
    let predict_ids = partition.all_ids();
    let un_set: BTreeSet<String> = partition.un_ids.iter().cloned().collect();
    let cfg = StageConfig {
        hp: opts.hp,
        stage,
        self_supervision: opts.self_supervision,
        jobs: opts.jobs,
        samples: &partition.samples,
        truth: &truth,
        predict_ids: &predict_ids,
        required_ids: &predict_ids,
        assess_ids: &[],
        un_ids: &un_set,
    };
    let result = run_stage(&folds, &cfg)?;
    Ok((folds, result))
}

/// Confidence learning over a pulse-wave stage: thresholds and the joint
/// from the rotating reliable pools, pruning over the uncertain pool.
fn ppg_confidence_step(
    partition: &PpgPartition,
    heldout: &[String],
    stage1: &CvResult,
) -> Result<(ClOutcome, Vec<String>)> {
    let tp_pool: Vec<&String> = partition
        .tp_ids
        .iter()
        .filter(|id| !heldout.contains(id))
        .collect();
    let mut reliable = Vec::new();
    for id in &tp_pool {
        reliable.push(SamplePrediction::new(
            (*id).clone(),
            stage1.accumulated(id)?,
            1,
            Group::TruePositive,
        )?);
    }
    for id in &partition.tn_ids {
        reliable.push(SamplePrediction::new(
            id.clone(),
            stage1.accumulated(id)?,
            0,
            Group::TrueNegative,
        )?);
    }
    let thresholds = class_thresholds(&reliable)?;
    let counts = confidence_joint(&reliable, &thresholds);
    let q = joint_distribution(&counts, partition.tn_ids.len() as f64, tp_pool.len() as f64)?;
    let mut un_preds = Vec::new();
    for id in &partition.un_ids {
        un_preds.push(SamplePrediction::new(
            id.clone(),
            stage1.accumulated(id)?,
            0,
            Group::Uncertain,
        )?);
    }
    let filter = pbnr_filter(&un_preds, &q);
    let removed: BTreeSet<&String> = filter.removed_ids.iter().collect();
    let survivors: Vec<String> = partition
        .un_ids
        .iter()
        .filter(|id| !removed.contains(id))
        .cloned()
        .collect();
    Ok((
        ClOutcome {
            thresholds,
            counts,
            q,
            filter,
        },
        survivors,
    ))
}

/// The two-stage pulse-wave pipeline: stage 1 on the full uncertain pool,
/// confidence-learning pruning, then an identically parameterized stage 2 on
/// the survivors.
pub fn two_stage_ppg(partition: &PpgPartition, opts: &PpgRunOptions) -> Result<TwoStageResult> {
    let (folds1, stage1) = ppg_stage(partition, opts, 1)?;
    if opts.skip_cl {
        return Ok(TwoStageResult {
            stage1,
            folds1,
            cl: None,
            stage2: None,
            folds2: None,
            surviving_pool: partition.un_ids.clone(),
        });
    }
    let (cl, survivors) = ppg_confidence_step(partition, &opts.heldout, &stage1)?;
    let mut pruned = partition.clone();
    pruned.un_ids = survivors.clone();
    let (folds2, stage2) = ppg_stage(&pruned, opts, 2)?;
    Ok(TwoStageResult {
        stage1,
        folds1,
        cl: Some(cl),
        stage2: Some(stage2),
        folds2: Some(folds2),
        surviving_pool: survivors,
    })
}

pub struct PublicRunOptions {
    pub hp: HyperParams,
    pub n_folds: usize,
    pub seed: u64,
    pub noise: NoiseInjectionConfig,
    pub self_supervision: SelfSupervision,
    pub skip_cl: bool,
    pub jobs: usize,
}

fn public_folds_with_noisy_subset(
    split: &PublicSplit,
    truth: &BTreeMap<String, u8>,
    n_folds: usize,
    seed: u64,
    noisy_subset: &[String],
) -> Result<Vec<FoldPlan>> {
    let clean = &split.clean_ids;
    let base = clean.len() / n_folds;
    let extra = clean.len() % n_folds;
    let mut start = 0usize;
    let mut plans = Vec::with_capacity(n_folds);
    for f in 0..n_folds {
        let size = base + usize::from(f < extra);
        let test_ids: Vec<String> = clean[start..start + size].to_vec();
        start += size;
        let mut train: Vec<(String, u8)> = clean
            .iter()
            .filter(|id| !test_ids.contains(id))
            .map(|id| (id.clone(), truth[id]))
            .collect();
        for id in noisy_subset {
            train.push((id.clone(), split.corrupted[id]));
        }
        let plan = FoldPlan {
            fold_index: f,
            train,
            test_ids,
            heldout_tp_ids: Vec::new(),
            seed: subseed(seed, &format!("fold{f}")),
        };
        plan.validate()?;
        plans.push(plan);
    }
    Ok(plans)
}

fn public_stage(
    partition: &PublicPartition,
    split: &PublicSplit,
    opts: &PublicRunOptions,
    noisy_subset: &[String],
    stage: u8,
) -> Result<(Vec<FoldPlan>, CvResult)> {
    let folds = public_folds_with_noisy_subset(
        split,
        &partition.labels,
        opts.n_folds,
        opts.seed,
        noisy_subset,
    )?;
    let un_set: BTreeSet<String> = split.noisy_ids.iter().cloned().collect();
    let assess: Vec<String> = noisy_subset.to_vec();
    let cfg = StageConfig {
        hp: opts.hp,
        stage,
        self_supervision: opts.self_supervision,
        jobs: opts.jobs,
        samples: &partition.samples,
        truth: &partition.labels,
        predict_ids: &split.clean_ids,
        required_ids: &split.clean_ids,
        assess_ids: &assess,
        un_ids: &un_set,
    };
    let result = run_stage(&folds, &cfg)?;
    Ok((folds, result))
}

/// Confidence learning for a public-mode stage: the clean segment plays the
/// reliable role (thresholds and joint from its out-of-training averages);
/// the noisy segment, trained on in every fold, is assessed from its
/// in-training averages and pruned symmetrically on both off-diagonal
/// noise rates.
fn public_confidence_step(
    partition: &PublicPartition,
    split: &PublicSplit,
    stage1: &CvResult,
) -> Result<(ClOutcome, Vec<String>)> {
    let mut reliable = Vec::new();
    let mut class_sizes = [0f64; 2];
    for id in &split.clean_ids {
        let label = partition.labels[id];
        class_sizes[label as usize] += 1.0;
        let group = if label == 1 {
            Group::TruePositive
        } else {
            Group::TrueNegative
        };
        reliable.push(SamplePrediction::new(
            id.clone(),
            stage1.accumulated(id)?,
            label,
            group,
        )?);
    }
    let thresholds = class_thresholds(&reliable)?;
    let counts = confidence_joint(&reliable, &thresholds);
    let q = joint_distribution(&counts, class_sizes[0], class_sizes[1])?;
    let mut noisy_preds = Vec::new();
    for id in &split.noisy_ids {
        let acc = stage1
            .assess
            .get(id)
            .filter(|a| a.count > 0)
            .ok_or_else(|| Error::Pipeline(format!("no assessment prediction for {id:?}")))?;
        noisy_preds.push(SamplePrediction::new(
            id.clone(),
            acc.mean(),
            split.corrupted[id],
            Group::Noisy,
        )?);
    }
    let filter = pbnr_filter_symmetric(&noisy_preds, &q);
    let removed: BTreeSet<&String> = filter.removed_ids.iter().collect();
    let survivors: Vec<String> = split
        .noisy_ids
        .iter()
        .filter(|id| !removed.contains(id))
        .cloned()
        .collect();
    Ok((
        ClOutcome {
            thresholds,
            counts,
            q,
            filter,
        },
        survivors,
    ))
}

/// The two-stage pipeline over a public dataset with injected symmetric
/// label noise. Returns the split alongside the stage results.
pub fn two_stage_public(
    partition: &PublicPartition,
    opts: &PublicRunOptions,
) -> Result<(TwoStageResult, PublicSplit)> {
    let (_, split) = split_folds_public(partition, opts.n_folds, &opts.noise, opts.seed)?;
    let (folds1, stage1) = public_stage(partition, &split, opts, &split.noisy_ids, 1)?;
    if opts.skip_cl {
        return Ok((
            TwoStageResult {
                stage1,
                folds1,
                cl: None,
                stage2: None,
                folds2: None,
                surviving_pool: split.noisy_ids.clone(),
            },
            split,
        ));
    }
    let (cl, survivors) = public_confidence_step(partition, &split, &stage1)?;
    let (folds2, stage2) = public_stage(partition, &split, opts, &survivors, 2)?;
    Ok((
        TwoStageResult {
            stage1,
            folds1,
            cl: Some(cl),
            stage2: Some(stage2),
            folds2: Some(folds2),
            surviving_pool: survivors,
        },
        split,
    ))
}

/// One row of the uncertainty ranking.
#[derive(Debug, Clone)]
pub struct RankEntry {
    pub id: String,
    pub p_positive: f64,
    pub is_heldout: bool,
}

#[derive(Debug, Clone)]
pub struct RankTable {
    /// Every pool member plus the held-out positives, by descending
    /// positive probability (ties by id).
    pub entries: Vec<RankEntry>,
    /// 0-based ranks of the held-out positives.
    pub heldout_ranks: Vec<(String, usize)>,
    pub average_rank: f64,
}

/// Ranks the held-out positives inside the uncertain pool by accumulated
/// positive probability.
pub fn rank_uncertain(
    cv: &CvResult,
    un_ids: &[String],
    heldout_tp_ids: &[String],
) -> Result<RankTable> {
    let mut entries = Vec::with_capacity(un_ids.len() + heldout_tp_ids.len());
    for id in un_ids {
        entries.push(RankEntry {
            id: id.clone(),
            p_positive: cv.accumulated(id)?.p[1],
            is_heldout: false,
        });
    }
    for id in heldout_tp_ids {
        entries.push(RankEntry {
            id: id.clone(),
            p_positive: cv.accumulated(id)?.p[1],
            is_heldout: true,
        });
    }
    entries.sort_by(|a, b| {
        b.p_positive
            .partial_cmp(&a.p_positive)
            .expect("finite probabilities")
            .then_with(|| a.id.cmp(&b.id))
    });
    let heldout_ranks: Vec<(String, usize)> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_heldout)
        .map(|(rank, e)| (e.id.clone(), rank))
        .collect();
    let average_rank = if heldout_ranks.is_empty() {
        0.0
    } else {
        heldout_ranks.iter().map(|(_, r)| *r as f64).sum::<f64>() / heldout_ranks.len() as f64
    };
    Ok(RankTable {
        entries,
        heldout_ranks,
        average_rank,
    })
}
