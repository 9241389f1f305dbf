//! Seeded data-generating processes for the factorial simulation study and
//! the replication engine that scores estimators against known truth.

mod config;
mod engine;
mod sampling;

pub use config::{
    build_truth, mixed_small_strata_for, sparse_strata_for, EffectPattern, FactorSelection, Generator, Regime,
    ScenarioConfig, LARGE_RHO, MIXED_LARGE_RHO,
};
pub use engine::{
    cell_keys, run_replicates, run_scenario, summarize, with_threads, write_summaries_csv, CellDraw, CellKey,
    CellSummary, Methods, Replicate, ScenarioSummary,
};
pub use sampling::{
    check_mix, mix_for_truth, sample_trial, sample_trial_individual_rd, sample_truncnorm, PotentialOutcomeMix,
    REJECTION_CAP,
};
