//! Episodic few-shot evaluation: seeded splits, test-fitted normalization,
//! nearest-prototype decoding and multi-trial reporting.

pub mod classify;
pub mod episode;
pub mod experiment;
pub mod seed;
pub mod trial;

pub use classify::{
    build_prototypes, classify, classify_exemplars, knn_vote, ExemplarSet, PrototypeSet,
};
pub use episode::{sample_episode, ClassSplit, Episode};
pub use experiment::{
    mean_std, run_experiment, slice_ablation, zero_shot_summary, AblationReport, CellReport,
    ExperimentConfig, ExperimentReport, SkippedIndex, ZeroShotSummary,
};
pub use seed::{derive_seed, splitmix64, trial_seed};
pub use trial::{
    run_trial, run_trial_on_features, ClassifierSettings, FeatureTable, Prediction, TrialResult,
};
