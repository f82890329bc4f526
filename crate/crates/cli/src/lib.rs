//! Training harness for the agents in `drdqn-core`: configuration files,
//! checkpoints, the training loop, greedy evaluation, plotting and the
//! `drdqn` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod plot;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{load_config, ConfigError};
pub use eval::{evaluate, evaluate_agent, EvalError};
pub use metrics::{MetricsRow, METRICS_HEADER};
pub use plot::emit_plot;
pub use train::{train, TrainOptions, TrainOutcome};
