//! Operator surface: run configuration, checkpoints, training and the
//! subcommands behind the `xnlu` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod train;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::RunConfig;
pub use train::{evaluate, train, train_with, EpochLog, Metrics, TrainOutcome};
