use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::TrainSet;
use super::loss::{masked_loss_and_grad, masked_multilabel_loss};
use super::optim::{Optimizer, OptimizerConfig};
use crate::error::{Error, Result};
use crate::eval::auroc_opt;
use crate::model::{sigmoid, Gradients, Head, ModelState, Pass, StageRecord};
use crate::rng::rng_for;

const EVAL_CHUNK: usize = 128;
/// Weight of each batch in the running normalization moments.
const MOMENT_MOMENTUM: f64 = 0.1;

/// What one stage trains and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    pub tasks: Vec<String>,
    /// Encoder blocks tuned, counted from the end.
    pub tuned_blocks: usize,
    pub tune_heads: bool,
    pub optimizer: OptimizerConfig,
}

/// Per-epoch training and validation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean AUROC over tasks of the predictions made while training.
    pub train_auroc: Option<f64>,
    pub val_loss: f64,
    pub val_auroc: Option<f64>,
}

/// A validation evaluation that was a candidate for model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub epoch: usize,
    pub batch: usize,
    pub metric: f64,
}

/// Result of a stage: curves, checkpoint metrics, and the selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub name: String,
    pub curves: Vec<EpochStats>,
    pub checkpoints: Vec<CheckpointStat>,
    pub best: Option<CheckpointStat>,
    pub encoder_hash_before: String,
    pub encoder_hash_after: String,
}

/// Precomputed activations entering the first trainable block (or the
/// pooled features when only heads train).
enum Inputs {
    Maps(Array4<f64>),
    Features(Array2<f64>),
}

impl Inputs {
    fn build(state: &ModelState, set: &TrainSet, start: Option<usize>) -> Result<Self> {
        let mut parts = Vec::new();
        let n = set.len();
        for lo in (0..n).step_by(EVAL_CHUNK) {
            let chunk = set
                .images
                .slice(ndarray::s![lo..(lo + EVAL_CHUNK).min(n), .., ..])
                .to_owned();
            parts.push(match start {
                Some(s) => Inputs::Maps(state.encode_prefix(&chunk, s)?),
                None => Inputs::Features(state.features(&chunk)?),
            });
        }
        Ok(match start {
            Some(_) => {
                let views: Vec<_> = parts
                    .iter()
                    .map(|p| match p {
                        Inputs::Maps(m) => m.view(),
                        Inputs::Features(_) => unreachable!(),
                    })
                    .collect();
                Inputs::Maps(ndarray::concatenate(Axis(1), &views).unwrap())
            }
            None => {
                let views: Vec<_> = parts
                    .iter()
                    .map(|p| match p {
                        Inputs::Features(f) => f.view(),
                        Inputs::Maps(_) => unreachable!(),
                    })
                    .collect();
                Inputs::Features(ndarray::concatenate(Axis(0), &views).unwrap())
            }
        })
    }

    fn len(&self) -> usize {
        match self {
            Inputs::Maps(m) => m.len_of(Axis(1)),
            Inputs::Features(f) => f.nrows(),
        }
    }
}

/// Logits per task for rows `idx`; also returns the cache for backward.
fn forward_rows(
    state: &ModelState,
    inputs: &Inputs,
    start: Option<usize>,
    idx: &[usize],
    tasks: &[String],
    pass: Pass,
) -> Result<(
    BTreeMap<String, Array1<f64>>,
    Option<crate::model::ForwardCache>,
    Array2<f64>,
)> {
    let (cache, features) = match (inputs, start) {
        (Inputs::Maps(m), Some(s)) => {
            let cache = state.forward_pass(&m.select(Axis(1), idx), s, pass)?;
            let f = cache.features.clone();
            (Some(cache), f)
        }
        (Inputs::Features(f), None) => (None, f.select(Axis(0), idx)),
        _ => unreachable!(),
    };
    let logits = tasks
        .iter()
        .map(|t| Ok((t.clone(), state.head_logits(t, &features)?)))
        .collect::<Result<_>>()?;
    Ok((logits, cache, features))
}

/// Validation loss and mean AUROC over tasks with both classes present.
fn evaluate(
    state: &ModelState,
    inputs: &Inputs,
    start: Option<usize>,
    set: &TrainSet,
    tasks: &[String],
) -> Result<(f64, Option<f64>)> {
    let n = inputs.len();
    let mut probs: BTreeMap<String, Vec<f64>> = tasks
        .iter()
        .map(|t| (t.clone(), Vec::with_capacity(n)))
        .collect();
    for lo in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (lo..(lo + EVAL_CHUNK).min(n)).collect();
        let (logits, _, _) = forward_rows(state, inputs, start, &idx, tasks, Pass::Eval)?;
        for (t, z) in logits {
            probs
                .get_mut(&t)
                .unwrap()
                .extend(z.iter().map(|&v| sigmoid(v)));
        }
    }
    let preds: BTreeMap<String, Array1<f64>> = probs
        .iter()
        .map(|(t, p)| (t.clone(), Array1::from(p.clone())))
        .collect();
    let loss = masked_multilabel_loss(&preds, &set.labels);
    Ok((loss, mean_auroc(&probs, &set.labels)))
}

fn mean_auroc(
    probs: &BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, Vec<crate::data::Binary>>,
) -> Option<f64> {
    let values: Vec<f64> = probs
        .iter()
        .filter_map(|(t, p)| {
            let (s, l): (Vec<f64>, Vec<bool>) = p
                .iter()
                .zip(&labels[t])
                .filter_map(|(&p, y)| y.map(|y| (p, y)))
                .unzip();
            auroc_opt(&s, &l)
        })
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Trains the configured scope of `state` on `train`, keeping the
/// parameters with the best validation metric.
///
/// The selection metric is the mean validation AUROC over the stage tasks
/// (negated validation loss if no task has both classes in validation). It
/// is evaluated after every epoch and every `checkpoint_interval_batches`
/// batches. Training stops after `max_epochs` or `patience` epochs without
/// improvement. Frozen blocks are run once up front and their output cached;
/// they always normalize with their running moments, while trainable blocks
/// use batch moments during training and update their running estimates.
pub fn train_stage(
    state: &mut ModelState,
    train: &TrainSet,
    validation: &TrainSet,
    config: &StageConfig,
) -> Result<StageOutcome> {
    let opt_cfg = &config.optimizer;
    opt_cfg.validate()?;
    let hash_before = state.encoder_hash();
    let mut outcome = StageOutcome {
        name: config.name.clone(),
        encoder_hash_before: hash_before.clone(),
        encoder_hash_after: hash_before,
        ..Default::default()
    };
    if opt_cfg.max_epochs == 0 {
        return Ok(outcome);
    }
    if train.is_empty() || validation.is_empty() {
        return Err(Error::MissingDataset(format!(
            "stage '{}' needs training and validation data",
            config.name
        )));
    }
    for task in &config.tasks {
        let col = train
            .labels
            .get(task)
            .ok_or_else(|| Error::MissingDataset(format!("no labels for task '{task}'")))?;
        let pos = col.iter().filter(|v| **v == Some(true)).count();
        let neg = col.iter().filter(|v| **v == Some(false)).count();
        if pos == 0 || neg == 0 {
            return Err(Error::SingleClass(format!(
                "task '{task}' has {pos} positive and {neg} negative training labels"
            )));
        }
        if !state.heads.contains_key(task) {
            state
                .heads
                .insert(task.clone(), Head::zeros(state.feature_dim()));
        }
    }
    state.set_trainable(config.tuned_blocks, config.tune_heads)?;
    let blocks = state.spec.blocks();
    let start = (config.tuned_blocks > 0).then(|| blocks - config.tuned_blocks);
    let train_inputs = Inputs::build(state, train, start)?;
    let val_inputs = Inputs::build(state, validation, start)?;

    let tasks = &config.tasks;
    let mut optimizer = Optimizer::new(opt_cfg.clone());
    let mut best_state: Option<ModelState> = None;
    let mut best_metric = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut batches = 0usize;
    let n = train.len();

    let metric_of = |loss: f64, auroc: Option<f64>| auroc.unwrap_or(-loss);
    for epoch in 0..opt_cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(opt_cfg.seed, epoch as u64));
        let mut seen: BTreeMap<String, Vec<f64>> =
            tasks.iter().map(|t| (t.clone(), vec![0.0; n])).collect();
        let (mut loss_sum, mut loss_batches) = (0.0, 0usize);
        let mut improved = false;
        for idx in order.chunks(opt_cfg.batch_size) {
            let (logits, cache, features) =
                forward_rows(state, &train_inputs, start, idx, tasks, Pass::Train)?;
            let labels = train.label_rows(idx);
            let (loss, d_logits) = masked_loss_and_grad(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    curve_dump: serde_json::to_string(&outcome.curves)?,
                });
            }
            loss_sum += loss;
            loss_batches += 1;
            for (t, z) in &logits {
                let col = seen.get_mut(t).unwrap();
                for (&i, &v) in idx.iter().zip(z) {
                    col[i] = sigmoid(v);
                }
            }
            let grads = match &cache {
                Some(cache) => state.backward(cache, &d_logits)?,
                None => Gradients {
                    blocks: vec![None; blocks],
                    heads: d_logits
                        .iter()
                        .map(|(t, g)| {
                            (
                                t.clone(),
                                Head {
                                    weight: features.t().dot(g),
                                    bias: g.sum(),
                                },
                            )
                        })
                        .filter(|_| state.trainable.heads)
                        .collect(),
                },
            };
            optimizer.step(state, &grads);
            if let Some(cache) = &cache {
                state.update_running_moments(cache, MOMENT_MOMENTUM);
            }
            batches += 1;
            let interval = opt_cfg.checkpoint_interval_batches;
            if interval > 0 && batches.is_multiple_of(interval) {
                let (vl, va) = evaluate(state, &val_inputs, start, validation, tasks)?;
                let metric = metric_of(vl, va);
                outcome.checkpoints.push(CheckpointStat {
                    epoch,
                    batch: batches,
                    metric,
                });
                if metric > best_metric {
                    best_metric = metric;
                    best_state = Some(state.clone());
                    outcome.best = outcome.checkpoints.last().cloned();
                    improved = true;
                }
            }
        }
        let (val_loss, val_auroc) = evaluate(state, &val_inputs, start, validation, tasks)?;
        let train_loss = loss_sum / loss_batches.max(1) as f64;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                curve_dump: serde_json::to_string(&outcome.curves)?,
            });
        }
        outcome.curves.push(EpochStats {
            epoch,
            train_loss,
            train_auroc: mean_auroc(&seen, &train.labels),
            val_loss,
            val_auroc,
        });
        let metric = metric_of(val_loss, val_auroc);
        outcome.checkpoints.push(CheckpointStat {
            epoch,
            batch: batches,
            metric,
        });
        if metric > best_metric {
            best_metric = metric;
            best_state = Some(state.clone());
            outcome.best = outcome.checkpoints.last().cloned();
            improved = true;
        }
        since_best = if improved { 0 } else { since_best + 1 };
        log::debug!(
            "{} epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}, val auroc {val_auroc:?}",
            config.name
        );
        if since_best >= opt_cfg.patience.max(1) {
            break;
        }
    }
    if let Some(best) = best_state {
        let trainable = state.trainable.clone();
        *state = best;
        state.trainable = trainable;
    }
    state.provenance.push(StageRecord {
        name: config.name.clone(),
        tasks: tasks.clone(),
        tuned_blocks: config.tuned_blocks,
        tune_heads: config.tune_heads,
        detail: format!(
            "{:?} lr {} momentum {} batch {}; {} epochs; best {:?}",
            opt_cfg.kind,
            opt_cfg.learning_rate,
            opt_cfg.momentum,
            opt_cfg.batch_size,
            outcome.curves.len(),
            outcome.best.as_ref().map(|b| b.metric)
        ),
    });
    outcome.encoder_hash_after = state.encoder_hash();
    Ok(outcome)
}
