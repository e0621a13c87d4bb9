use serde::{Deserialize, Serialize};

use super::dataset::TrainSet;
use super::optim::OptimizerConfig;
use super::stage::{train_stage, StageConfig, StageOutcome};
use crate::error::{Error, Result};
use crate::model::ModelState;

/// Validation metric of every grid point and the chosen index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub configs: Vec<OptimizerConfig>,
    pub val_metric: Vec<Option<f64>>,
    pub best: usize,
}

/// Trains one copy of `state` per optimizer config and keeps the best by
/// validation metric; ties go to the smaller learning rate, then the
/// smaller momentum.
pub fn grid_select(
    state: &ModelState,
    train: &TrainSet,
    validation: &TrainSet,
    stage: &StageConfig,
    grid: &[OptimizerConfig],
) -> Result<(ModelState, StageOutcome, GridResult)> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut runs = Vec::with_capacity(grid.len());
    for cfg in grid {
        let mut candidate = state.clone();
        let stage_cfg = StageConfig {
            optimizer: cfg.clone(),
            ..stage.clone()
        };
        let outcome = train_stage(&mut candidate, train, validation, &stage_cfg)?;
        let metric = outcome.best.as_ref().map(|b| b.metric);
        runs.push((candidate, outcome, metric));
    }
    let key = |i: usize| {
        (
            runs[i].2.unwrap_or(f64::NEG_INFINITY),
            grid[i].learning_rate,
            grid[i].momentum,
        )
    };
    let best = (0..grid.len())
        .min_by(|&a, &b| {
            let (ma, la, pa) = key(a);
            let (mb, lb, pb) = key(b);
            mb.total_cmp(&ma)
                .then(la.total_cmp(&lb))
                .then(pa.total_cmp(&pb))
        })
        .unwrap();
    let result = GridResult {
        configs: grid.to_vec(),
        val_metric: runs.iter().map(|r| r.2).collect(),
        best,
    };
    let (state, outcome, _) = runs.swap_remove(best);
    Ok((state, outcome, result))
}
