//! Experiment orchestration: JSON configs, per-task seed derivation,
//! parallel (size, replicate) runs and CSV/JSON persistence.

mod config;
mod experiments;
mod iid;
mod output;

pub use config::{
    load_config, EnkfSettings, ExperimentConfig, ExperimentKind, IidSettings, ModelChoice, RtSettings,
};
pub use experiments::{
    model_factory, quiet, run_experiment, run_identifiability_sweep, run_rate_fit, run_scaling_experiment,
    run_simulation, task_stream, truth_series, Progress, ScalingRun,
};
pub use iid::{population_objective, IidFactory, IidModel};
pub use output::{write_results_csv, ExperimentOutput, Index, RateReport, ResultRow, RESULT_HEADER, SCHEMA_LINE};
