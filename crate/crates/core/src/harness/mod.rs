//! Experiment configuration, seeded runs, reports and comparison tables.

pub mod compare;
pub mod config;
pub mod layers;
pub mod run;

pub use compare::{compare_dirs, compare_runs, Comparison, ComparisonRow, NO_PRUNING};
pub use config::{key_schema, parse_key_values, DataSource, ExperimentConfig, ModelSpec};
pub use layers::{layer_share_report, max_share_deviation, write_layer_shares_csv, LayerShare};
pub use run::{
    aggregate, init_model, prune_config, run, run_sweep, stage_eval, stage_prune, stage_train,
    sweep_dir_name, trial_data, Aggregate, AggregateRow, Artifact, Failure, RunManifest,
    SeedRecord,
};
