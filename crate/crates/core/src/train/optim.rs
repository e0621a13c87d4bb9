use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

/// Optimizer and stopping settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Extra validation checkpoints every this many batches (0 disables).
    pub checkpoint_interval_batches: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::sgd(1e-2, 0.9)
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            checkpoint_interval_batches: 200,
            seed: 0,
        }
    }

    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-4,
            batch_size: 16,
            ..Self::sgd(1e-4, 0.0)
        }
    }

    /// Learning rate × momentum grid used for stage hyperparameter search.
    pub fn sgd_grid() -> Vec<Self> {
        [1e-3, 1e-2, 1e-1]
            .into_iter()
            .flat_map(|lr| [0.8, 0.9].into_iter().map(move |m| Self::sgd(lr, m)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config(
                "momentum and beta parameters must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

const ADAM_EPS: f64 = 1e-8;

/// Per-parameter optimizer memory, keyed by parameter group name.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Applies one update to every group that has a gradient.
    pub fn step(&mut self, state: &mut ModelState, grads: &Gradients) {
        self.steps += 1;
        for (i, (block, grad)) in state.blocks.iter_mut().zip(&grads.blocks).enumerate() {
            let Some(g) = grad else { continue };
            self.update(
                &format!("block{i}.weight"),
                block.weight.as_slice_mut().unwrap(),
                g.weight.as_slice().unwrap(),
            );
            self.update(
                &format!("block{i}.scale"),
                block.scale.as_slice_mut().unwrap(),
                g.scale.as_slice().unwrap(),
            );
            self.update(
                &format!("block{i}.bias"),
                block.bias.as_slice_mut().unwrap(),
                g.bias.as_slice().unwrap(),
            );
        }
        for (task, g) in &grads.heads {
            let Some(head) = state.heads.get_mut(task) else {
                continue;
            };
            self.update(
                &format!("head.{task}.weight"),
                head.weight.as_slice_mut().unwrap(),
                g.weight.as_slice().unwrap(),
            );
            self.update(
                &format!("head.{task}.bias"),
                std::slice::from_mut(&mut head.bias),
                &[g.bias],
            );
        }
    }

    fn update(&mut self, key: &str, params: &mut [f64], grad: &[f64]) {
        let c = &self.config;
        let m = self
            .first
            .entry(key.to_string())
            .or_insert_with(|| vec![0.0; params.len()]);
        match c.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, v), &g) in params.iter_mut().zip(m.iter_mut()).zip(grad) {
                    *v = c.momentum * *v + g;
                    *p -= c.learning_rate * *v;
                }
            }
            OptimizerKind::Adam => {
                let s = self
                    .second
                    .entry(key.to_string())
                    .or_insert_with(|| vec![0.0; params.len()]);
                let t = self.steps as i32;
                let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
                for (((p, m1), m2), &g) in params
                    .iter_mut()
                    .zip(m.iter_mut())
                    .zip(s.iter_mut())
                    .zip(grad)
                {
                    *m1 = c.beta1 * *m1 + (1.0 - c.beta1) * g;
                    *m2 = c.beta2 * *m2 + (1.0 - c.beta2) * g * g;
                    *p -= c.learning_rate * (*m1 / bc1) / ((*m2 / bc2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}
