//! Experiment pipeline: partitions, noise injection, cross-validation
//! stages, confidence-learning pruning, metrics, ranking, and synthetic data
//! generation.

pub mod metrics;
pub mod partition;
pub mod public_data;
pub mod run;
pub mod synth;

pub use metrics::{mean_std, metrics, Metrics};
pub use partition::{
    inject_symmetric_noise, load_ppg_partition, pick_heldout, split_folds_ppg,
    split_folds_ppg_with_heldout, split_folds_public, DatasetPartition, FoldPlan, FoldQuotas,
    NoiseInjectionConfig, NoiseMode, PpgPartition, PublicPartition, PublicSplit,
};
pub use public_data::{convert_ts, read_public_dataset, write_public_dataset};
pub use run::{
    rank_uncertain, run_stage, two_stage_ppg, two_stage_public, Accum, ClOutcome, CvResult,
    PpgRunOptions, PublicRunOptions, RankTable, SelfSupervision, StageConfig, TwoStageResult,
};
pub use synth::{
    generate_synthetic_ppg, generate_synthetic_ppg_with_truth, synthetic_ppg_partition,
    synthetic_public_dataset, SynthProfile, SynthTruth,
};
