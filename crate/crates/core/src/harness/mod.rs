//! Experiment harness: the train / eval / gradcheck / ablate / datagen
//! commands behind the CLI, shared by the integration tests.

pub mod ablate;
pub mod datagen;
pub mod eval;
pub mod gradcheck;
pub mod train;

use crate::config::{ExperimentConfig, TaskKind};
use crate::error::Result;
use crate::synthdata::shapes::SplitKind;
use crate::synthdata::{pose, shapes, SequenceBatch};

pub use ablate::{cmd_ablate, AblateOutcome, CellResult};
pub use datagen::cmd_datagen;
pub use eval::{cmd_eval, evaluate, EvalReport};
pub use gradcheck::{
    analytic_grads, cmd_gradcheck, fd_check, random_batch, GradCheckReport, DEFAULT_TOLERANCE,
};
pub use train::{cmd_train, TrainOutcome, TrainRequest};

/// Files every run directory contains.
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.log";
pub const CHECKPOINT_BASE: &str = "checkpoint";

/// Draw samples `start .. start+n` of the configured task.
pub fn task_batch(
    cfg: &ExperimentConfig,
    seed: u64,
    split: SplitKind,
    start: u64,
    n: usize,
) -> Result<SequenceBatch> {
    match cfg.task {
        TaskKind::Shapes => shapes::batch(&cfg.shapes_config(), seed, split, start, n),
        TaskKind::Pose => pose::batch(&cfg.pose_config(), seed, split, start, n),
    }
}
