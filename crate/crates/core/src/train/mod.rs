//! Losses, optimizers, staged training, hyperparameter selection, and the
//! transfer-learning schemes.

mod dataset;
mod grid;
mod loss;
mod optim;
mod scheme;
mod stage;

pub use dataset::TrainSet;
pub use grid::{grid_select, GridResult};
pub use loss::{bce, masked_loss_and_grad, masked_multilabel_loss, masked_task_loss, CLAMP};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use scheme::{
    run_scheme, DatasetRole, ExecutedStage, RoleData, SchemeCache, SchemeConfig, SchemeData,
    SchemeName, SchemeRun, SchemeRunConfig, StageSpec, TunedScope,
};
pub use stage::{train_stage, CheckpointStat, EpochStats, StageConfig, StageOutcome};
