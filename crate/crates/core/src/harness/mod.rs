//! Experiment orchestration behind the command-line tool.

pub mod benchmark;
pub mod config;
pub mod run;
pub mod train;

pub use benchmark::{
    cmd_benchmark, cmd_correlate, cmd_rho_sweep, BenchmarkConfig, CurveAxis, CurvePoint, ResultsTable, RhoChoice,
    SystemEntry,
};
pub use config::{default_adam, ExperimentConfig, ModelConfig, OptimizerChoice, CONFIG_VERSION};
pub use run::{
    build_test_sets, cmd_evaluate, cmd_gen_data, cmd_landscape, cmd_sharpness, cmd_train, parse_test_set,
    LandscapeParams, RunResult, TestSetResult,
};
pub use train::{dataset_eer, score_dataset, train_model, TrainOutcome};
