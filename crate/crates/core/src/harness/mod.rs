//! Configuration files, checkpoints, metrics and the command entry points.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use commands::{
    cmd_eval, cmd_train, dump_trajectory, load_config, evaluate_params, replay_matches, trajectory_csv, train_run, EvalMode,
    EvalOptions, EvalSummary, TrainOptions,
};
pub use config::{parse_config, parse_config_with, parse_override, RunConfig};
pub use metrics::{aggregate_metrics, read_metrics, METRICS_HEADER};

/// True when `DIMAPG_DETERMINISTIC=1` is set.
pub fn deterministic_from_env() -> bool {
    std::env::var("DIMAPG_DETERMINISTIC").is_ok_and(|v| v == "1")
}
