//! Dataset partitions, fold construction, and label-noise injection.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ppg::FeatureMatrix;
use crate::rng::{sample_indices, shuffled, subseed, SeededRng};

/// Labeled pools of the pulse-wave cohort: reliable positives, reliable
/// negatives, and a larger uncertain pool carrying negative given labels.
#[derive(Debug, Clone)]
pub struct PpgPartition {
    pub tp_ids: Vec<String>,
    pub tn_ids: Vec<String>,
    pub un_ids: Vec<String>,
    pub samples: BTreeMap<String, FeatureMatrix>,
}

impl PpgPartition {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.tp_ids.iter().chain(&self.tn_ids).chain(&self.un_ids) {
            if !seen.insert(id) {
                return Err(Error::FoldPlan(format!("duplicate sample id {id:?}")));
            }
            if !self.samples.contains_key(id) {
                return Err(Error::FoldPlan(format!("id {id:?} has no feature matrix")));
            }
        }
        Ok(())
    }

    /// Given label of an id: positives 1, everything else 0.
    pub fn given_label(&self, id: &str) -> u8 {
        u8::from(self.tp_ids.iter().any(|t| t == id))
    }

    pub fn all_ids(&self) -> Vec<String> {
        self.tp_ids
            .iter()
            .chain(&self.tn_ids)
            .chain(&self.un_ids)
            .cloned()
            .collect()
    }
}

/// A plain labeled dataset (public archives): ids with true labels.
#[derive(Debug, Clone)]
pub struct PublicPartition {
    pub ids: Vec<String>,
    pub labels: BTreeMap<String, u8>,
    pub samples: BTreeMap<String, FeatureMatrix>,
}

impl PublicPartition {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in &self.ids {
            if !seen.insert(id) {
                return Err(Error::FoldPlan(format!("duplicate sample id {id:?}")));
            }
            if !self.samples.contains_key(id) || !self.labels.contains_key(id) {
                return Err(Error::FoldPlan(format!(
                    "id {id:?} missing label or matrix"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum DatasetPartition {
    Ppg(PpgPartition),
    Public(PublicPartition),
}

/// Loads a pulse-wave partition from a directory of `<id>.features` files
/// (written by the preprocess command). Group membership comes from the id
/// prefix: `tp`, `tn`, or `un`.
pub fn load_ppg_partition(dir: &std::path::Path) -> Result<PpgPartition> {
    let display = dir.display().to_string();
    let mut tp_ids = Vec::new();
    let mut tn_ids = Vec::new();
    let mut un_ids = Vec::new();
    let mut samples = BTreeMap::new();
    let mut entries: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(&display, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().ends_with(".features"))
        })
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_name().expect("filtered above").to_string_lossy();
        let id = name.trim_end_matches(".features").to_string();
        let bucket = if id.starts_with("tp") {
            &mut tp_ids
        } else if id.starts_with("tn") {
            &mut tn_ids
        } else if id.starts_with("un") {
            &mut un_ids
        } else {
            return Err(Error::data(
                path.display().to_string(),
                "feature file id must start with tp, tn, or un",
            ));
        };
        bucket.push(id.clone());
        samples.insert(id, crate::ppg::read_feature_file(&path)?);
    }
    let partition = PpgPartition {
        tp_ids,
        tn_ids,
        un_ids,
        samples,
    };
    if partition.samples.is_empty() {
        return Err(Error::data(&display, "no .features files found"));
    }
    partition.validate()?;
    Ok(partition)
}

/// Per-fold quotas of the pulse-wave protocol.
#[derive(Debug, Clone, Copy)]
pub struct FoldQuotas {
    pub test_tp: usize,
    pub test_tn: usize,
    pub heldout_tp: usize,
    pub un_per_fold: usize,
}

impl Default for FoldQuotas {
    fn default() -> Self {
        Self {
            test_tp: 6,
            test_tn: 6,
            heldout_tp: 3,
            un_per_fold: 6,
        }
    }
}

/// One cross-validation fold: training ids with their assigned training
/// labels, test ids, and (in the pulse-wave protocol) the held-out
/// positives excluded from the rotation entirely.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub fold_index: usize,
    pub train: Vec<(String, u8)>,
    pub test_ids: Vec<String>,
    pub heldout_tp_ids: Vec<String>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn train_id_set(&self) -> BTreeSet<&str> {
        self.train.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let train = self.train_id_set();
        for id in &self.test_ids {
            if train.contains(id.as_str()) {
                return Err(Error::FoldPlan(format!(
                    "fold {}: id {id:?} in both train and test",
                    self.fold_index
                )));
            }
        }
        for id in &self.heldout_tp_ids {
            if train.contains(id.as_str()) || self.test_ids.contains(id) {
                return Err(Error::FoldPlan(format!(
                    "fold {}: held-out id {id:?} leaked into the rotation",
                    self.fold_index
                )));
            }
        }
        Ok(())
    }
}

/// A seeded random total order on ids: sort by a per-id hash of the seed.
/// Unlike an index shuffle this order is stable under pool shrinkage, so a
/// pruned pool deals the surviving ids into the same relative slots.
fn hash_order(ids: &[String], seed: u64, label: &str) -> Vec<String> {
    let base = subseed(seed, label);
    let mut keyed: Vec<(u64, &String)> = ids.iter().map(|id| (subseed(base, id), id)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    keyed.into_iter().map(|(_, id)| id.clone()).collect()
}

/// Deals the uncertain pool so that membership is stable under pruning:
/// every id hashes to one fold, and a fold draws the first `slots` ids of
/// its class in hash order. Removing an id then changes only its own fold's
/// draw (the next class member slides in). Pools too small to fill every
/// class fall back to cyclic dealing.
fn deal_stable(
    pool_in_order: &[String],
    seed: u64,
    n_folds: usize,
    slots: usize,
) -> Result<Vec<Vec<String>>> {
    let class_base = subseed(seed, "un-fold-class");
    let mut by_class: Vec<Vec<String>> = vec![Vec::new(); n_folds];
    for id in pool_in_order {
        by_class[(subseed(class_base, id) % n_folds as u64) as usize].push(id.clone());
    }
    if by_class.iter().all(|c| c.len() >= slots) {
        Ok(by_class
            .into_iter()
            .map(|mut c| {
                c.truncate(slots);
                c
            })
            .collect())
    } else {
        deal_cyclic(pool_in_order, n_folds, slots, "uncertain draw")
    }
}

/// Deals `slots_per_fold` distinct ids per fold from a shuffled cyclic pool;
/// every id appears in at least one fold when fold count x slots covers the
/// pool.
fn deal_cyclic(
    pool: &[String],
    n_folds: usize,
    slots_per_fold: usize,
    what: &str,
) -> Result<Vec<Vec<String>>> {
    if pool.len() < slots_per_fold {
        return Err(Error::FoldPlan(format!(
            "{what}: pool of {} cannot fill {} slots per fold",
            pool.len(),
            slots_per_fold
        )));
    }
    let mut folds = Vec::with_capacity(n_folds);
    let mut cursor = 0usize;
    for _ in 0..n_folds {
        let mut fold = Vec::with_capacity(slots_per_fold);
        while fold.len() < slots_per_fold {
            let candidate = &pool[cursor % pool.len()];
            cursor += 1;
            if !fold.contains(candidate) {
                fold.push(candidate.clone());
            }
        }
        folds.push(fold);
    }
    Ok(folds)
}

/// Pulse-wave fold construction with an explicit held-out positive trio.
///
/// Per fold: `test_tp` positives and `test_tn` negatives rotate through the
/// test set so that every pool member is tested at least once across folds;
/// the remaining positives and negatives train, together with
/// `un_per_fold` uncertain samples (labeled negative) drawn from a rotating
/// shuffle of the uncertain pool.
pub fn split_folds_ppg_with_heldout(
    partition: &PpgPartition,
    n_folds: usize,
    seed: u64,
    heldout: &[String],
    quotas: FoldQuotas,
) -> Result<Vec<FoldPlan>> {
    partition.validate()?;
    for id in heldout {
        if !partition.tp_ids.contains(id) {
            return Err(Error::FoldPlan(format!(
                "held-out id {id:?} is not a positive"
            )));
        }
    }
    let tp_pool: Vec<String> = partition
        .tp_ids
        .iter()
        .filter(|id| !heldout.contains(id))
        .cloned()
        .collect();
    let tn_pool = partition.tn_ids.clone();
    if tp_pool.len() < quotas.test_tp + 1 || tn_pool.len() < quotas.test_tn + 1 {
        return Err(Error::FoldPlan(format!(
            "quota infeasible: {} rotating positives (need > {}), {} negatives (need > {})",
            tp_pool.len(),
            quotas.test_tp,
            tn_pool.len(),
            quotas.test_tn
        )));
    }
    if n_folds * quotas.test_tp < tp_pool.len() || n_folds * quotas.test_tn < tn_pool.len() {
        return Err(Error::FoldPlan(format!(
            "quota infeasible: {n_folds} folds cannot cover {} positives / {} negatives in test",
            tp_pool.len(),
            tn_pool.len()
        )));
    }
    let tp_shuffled = hash_order(&tp_pool, seed, "order-tp");
    let tn_shuffled = hash_order(&tn_pool, seed, "order-tn");
    let un_shuffled = hash_order(&partition.un_ids, seed, "order-un");
    let tp_tests = deal_cyclic(&tp_shuffled, n_folds, quotas.test_tp, "test positives")?;
    let tn_tests = deal_cyclic(&tn_shuffled, n_folds, quotas.test_tn, "test negatives")?;
    let un_draws = deal_stable(&un_shuffled, seed, n_folds, quotas.un_per_fold)?;

    let mut plans = Vec::with_capacity(n_folds);
    for f in 0..n_folds {
        let mut train: Vec<(String, u8)> = Vec::new();
        for id in &tp_pool {
            if !tp_tests[f].contains(id) {
                train.push((id.clone(), 1));
            }
        }
        for id in &tn_pool {
            if !tn_tests[f].contains(id) {
                train.push((id.clone(), 0));
            }
        }
        for id in &un_draws[f] {
            train.push((id.clone(), 0));
        }
        let mut test_ids = tp_tests[f].clone();
        test_ids.extend(tn_tests[f].iter().cloned());
        let plan = FoldPlan {
            fold_index: f,
            train,
            test_ids,
            heldout_tp_ids: heldout.to_vec(),
            seed: subseed(seed, &format!("fold{f}")),
        };
        plan.validate()?;
        plans.push(plan);
    }
    Ok(plans)
}

/// Like [`split_folds_ppg_with_heldout`] with the held-out trio drawn from
/// the seed (the first `heldout_tp` positives of a seeded shuffle).
pub fn split_folds_ppg(
    partition: &PpgPartition,
    n_folds: usize,
    seed: u64,
) -> Result<Vec<FoldPlan>> {
    let quotas = FoldQuotas::default();
    let heldout = pick_heldout(partition, seed, 0, quotas.heldout_tp)?;
    split_folds_ppg_with_heldout(partition, n_folds, seed, &heldout, quotas)
}

/// The held-out positive trio of repetition `rep`: consecutive chunks of a
/// single seeded shuffle, so repetitions rotate through disjoint trios.
pub fn pick_heldout(
    partition: &PpgPartition,
    seed: u64,
    rep: usize,
    count: usize,
) -> Result<Vec<String>> {
    let mut rng = crate::rng::seeded_rng(subseed(seed, "heldout"));
    let order = shuffled(&partition.tp_ids, &mut rng);
    let start = rep * count;
    if start + count > order.len() {
        return Err(Error::FoldPlan(format!(
            "repetition {rep} needs positives {start}..{} but only {} exist",
            start + count,
            order.len()
        )));
    }
    Ok(order[start..start + count].to_vec())
}

/// How the noisy segment's labels are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Flip an exact round(ratio * n) count of uniformly chosen ids.
    #[default]
    Flip,
    /// Permute the labels of a uniformly chosen subset (the historical
    /// shuffling formulation; realized flip count varies).
    Shuffle,
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseInjectionConfig {
    pub ratio: f64,
    pub mode: NoiseMode,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct NoiseRealization {
    /// Labels after corruption, for every id passed in.
    pub labels: BTreeMap<String, u8>,
    /// Ids whose label actually changed.
    pub flipped_ids: Vec<String>,
}

/// Symmetric label-noise injection over `ids`.
pub fn inject_symmetric_noise(
    ids: &[String],
    labels: &BTreeMap<String, u8>,
    config: &NoiseInjectionConfig,
    rng: &mut SeededRng,
) -> Result<NoiseRealization> {
    if !(0.0..=1.0).contains(&config.ratio) {
        return Err(Error::Config(format!(
            "noise ratio {} outside [0, 1]",
            config.ratio
        )));
    }
    let mut out: BTreeMap<String, u8> = ids.iter().map(|id| (id.clone(), labels[id])).collect();
    let k = (config.ratio * ids.len() as f64 + 0.5).floor() as usize;
    let chosen = sample_indices(ids.len(), k.min(ids.len()), rng);
    let mut flipped_ids = Vec::new();
    match config.mode {
        NoiseMode::Flip => {
            for idx in chosen {
                let id = &ids[idx];
                let l = out.get_mut(id).expect("id present");
                *l = 1 - *l;
                flipped_ids.push(id.clone());
            }
        }
        NoiseMode::Shuffle => {
            let mut selected: Vec<usize> = chosen;
            selected.sort_unstable();
            let values: Vec<u8> = selected.iter().map(|&i| labels[&ids[i]]).collect();
            let permuted = shuffled(&values, rng);
            for (&idx, &new_label) in selected.iter().zip(&permuted) {
                let id = &ids[idx];
                if out[id] != new_label {
                    flipped_ids.push(id.clone());
                }
                out.insert(id.clone(), new_label);
            }
        }
    }
    flipped_ids.sort();
    Ok(NoiseRealization {
        labels: out,
        flipped_ids,
    })
}

/// Fixed pools of a public-mode run: the noisy segment (with its corrupted
/// labels) is global, while the clean pool rotates through the test ninths.
#[derive(Debug, Clone)]
pub struct PublicSplit {
    pub clean_ids: Vec<String>,
    pub noisy_ids: Vec<String>,
    pub corrupted: BTreeMap<String, u8>,
    pub flipped_ids: Vec<String>,
}

/// Public-dataset fold construction: a single seeded shuffle fixes the noisy
/// segment (4/9 of the data, labels corrupted once per run); the remaining
/// 5/9 rotate as disjoint test slices of roughly 1/9 each, and the clean
/// segment of a fold is the clean pool minus its test slice.
pub fn split_folds_public(
    partition: &PublicPartition,
    n_folds: usize,
    noise: &NoiseInjectionConfig,
    seed: u64,
) -> Result<(Vec<FoldPlan>, PublicSplit)> {
    partition.validate()?;
    let n = partition.ids.len();
    if n < 9 {
        return Err(Error::FoldPlan(format!(
            "dataset of {n} samples is too small (need >= 9)"
        )));
    }
    if n_folds == 0 {
        return Err(Error::FoldPlan("n_folds must be >= 1".into()));
    }
    let mut rng = crate::rng::seeded_rng(subseed(seed, "public-split"));
    let order = shuffled(&partition.ids, &mut rng);
    let ninth = n / 9;
    let noisy_ids: Vec<String> = order[..4 * ninth].to_vec();
    let clean_ids: Vec<String> = order[4 * ninth..].to_vec();

    let mut noise_rng = crate::rng::seeded_rng(subseed(noise.seed, "noise"));
    let realization = inject_symmetric_noise(&noisy_ids, &partition.labels, noise, &mut noise_rng)?;

    // Disjoint, nearly equal test slices over the clean pool.
    let mut plans = Vec::with_capacity(n_folds);
    let base = clean_ids.len() / n_folds;
    let extra = clean_ids.len() % n_folds;
    let mut start = 0usize;
    for f in 0..n_folds {
        let size = base + usize::from(f < extra);
        let test_ids: Vec<String> = clean_ids[start..start + size].to_vec();
        start += size;
        let mut train: Vec<(String, u8)> = clean_ids
            .iter()
            .filter(|id| !test_ids.contains(id))
            .map(|id| (id.clone(), partition.labels[id]))
            .collect();
        for id in &noisy_ids {
            train.push((id.clone(), realization.labels[id]));
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
    Ok((
        plans,
        PublicSplit {
            clean_ids,
            noisy_ids,
            corrupted: realization.labels,
            flipped_ids: realization.flipped_ids,
        },
    ))
}
