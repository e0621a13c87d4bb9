use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dataset::TrainSet;
use super::grid::{grid_select, GridResult};
use super::optim::OptimizerConfig;
use super::stage::{train_stage, StageConfig, StageOutcome};
use crate::error::{Error, Result};
use crate::eval::median;
use crate::model::{ModelSpec, ModelState, StageRecord};
use crate::rng::derive_seed_str;

/// Named training recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeName {
    /// Train everything on the target from random initialization.
    AllLayers,
    /// Multilabel pretraining, then tune everything on the target.
    AllLayersMc,
    /// Multilabel pretraining, then tune only the head on the target.
    LastLayerMc,
    /// Multilabel pretraining, full tuning on the source task, then tune
    /// only the head on the target.
    LastLayerMcA,
    /// Jointly train source and target heads on a shared encoder.
    Multitask,
    /// Like `LastLayerMcA` but the last `k` encoder blocks are tuned too.
    Blockwise(usize),
}

impl SchemeName {
    pub const TABLE: [SchemeName; 4] = [
        SchemeName::AllLayers,
        SchemeName::AllLayersMc,
        SchemeName::LastLayerMc,
        SchemeName::LastLayerMcA,
    ];
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeName::AllLayers => f.write_str("all_layers"),
            SchemeName::AllLayersMc => f.write_str("all_layers_mc"),
            SchemeName::LastLayerMc => f.write_str("last_layer_mc"),
            SchemeName::LastLayerMcA => f.write_str("last_layer_mc_a"),
            SchemeName::Multitask => f.write_str("multitask"),
            SchemeName::Blockwise(k) => write!(f, "blockwise({k})"),
        }
    }
}

impl FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all_layers" => SchemeName::AllLayers,
            "all_layers_mc" => SchemeName::AllLayersMc,
            "last_layer_mc" => SchemeName::LastLayerMc,
            "last_layer_mc_a" => SchemeName::LastLayerMcA,
            "multitask" => SchemeName::Multitask,
            other => {
                let k = other
                    .strip_prefix("blockwise(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| other.strip_prefix("blockwise:"))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown scheme '{other}'")))?;
                SchemeName::Blockwise(k)
            }
        })
    }
}

impl Serialize for SchemeName {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SchemeName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Data a stage trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    /// Large multilabel dataset (all of its tasks).
    Pretrain,
    /// Source task on the source data.
    Source,
    /// Target task on the target data.
    Target,
    /// Source and target data together, each labelled only for its task.
    Joint,
}

/// Parameters a stage may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunedScope {
    All,
    HeadOnly,
    LastBlocks(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub role: DatasetRole,
    pub scope: TunedScope,
}

/// Ordered stages of a named scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub name: SchemeName,
    pub pretrain_stages: Vec<StageSpec>,
    pub final_stage: StageSpec,
}

impl SchemeConfig {
    pub fn new(name: SchemeName) -> Self {
        use DatasetRole::*;
        use TunedScope::*;
        let stage = |role, scope| StageSpec { role, scope };
        let (pretrain_stages, final_stage) = match name {
            SchemeName::AllLayers => (vec![], stage(Target, All)),
            SchemeName::AllLayersMc => (vec![stage(Pretrain, All)], stage(Target, All)),
            SchemeName::LastLayerMc => (vec![stage(Pretrain, All)], stage(Target, HeadOnly)),
            SchemeName::LastLayerMcA => (
                vec![stage(Pretrain, All), stage(Source, All)],
                stage(Target, HeadOnly),
            ),
            SchemeName::Multitask => (vec![], stage(Joint, All)),
            SchemeName::Blockwise(k) => (
                vec![stage(Pretrain, All), stage(Source, All)],
                stage(Target, if k == 0 { HeadOnly } else { LastBlocks(k) }),
            ),
        };
        Self {
            name,
            pretrain_stages,
            final_stage,
        }
    }

    pub fn stages(&self) -> impl Iterator<Item = &StageSpec> {
        self.pretrain_stages
            .iter()
            .chain(std::iter::once(&self.final_stage))
    }
}

/// Train and validation sets for one role.
#[derive(Debug, Clone)]
pub struct RoleData {
    pub train: TrainSet,
    pub validation: TrainSet,
}

impl RoleData {
    pub fn tasks(&self) -> Vec<String> {
        self.train.tasks()
    }
}

/// Everything a scheme might need; roles a scheme does not use may be absent.
#[derive(Debug, Clone, Default)]
pub struct SchemeData {
    pub pretrain: Option<RoleData>,
    pub source: Option<RoleData>,
    pub target: Option<RoleData>,
}

/// Training settings shared by every scheme of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeRunConfig {
    pub model: ModelSpec,
    pub source_task: String,
    pub target_task: String,
    /// Multilabel pretraining optimizer; its `max_epochs` is the epoch budget.
    pub pretrain_optimizer: OptimizerConfig,
    /// Independent pretraining restarts; the best by mean validation AUROC wins.
    pub pretrain_restarts: usize,
    pub source_optimizer: OptimizerConfig,
    /// Final-stage grid; a single entry disables the search.
    pub final_grid: Vec<OptimizerConfig>,
    pub seed: u64,
}

impl Default for SchemeRunConfig {
    fn default() -> Self {
        let mut pretrain = OptimizerConfig::adam();
        pretrain.max_epochs = 3;
        pretrain.patience = 3;
        Self {
            model: ModelSpec::default(),
            source_task: crate::synthgen::SOURCE_TASK.into(),
            target_task: crate::synthgen::TARGET_TASK.into(),
            pretrain_optimizer: pretrain,
            pretrain_restarts: 3,
            source_optimizer: OptimizerConfig::sgd(1e-2, 0.9),
            final_grid: vec![OptimizerConfig::sgd(1e-2, 0.9)],
            seed: 0,
        }
    }
}

/// One stage as executed, for provenance and curve output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedStage {
    pub role: DatasetRole,
    pub scope: TunedScope,
    pub tuned_blocks: usize,
    pub tune_heads: bool,
    pub trainable_params: usize,
    pub outcome: StageOutcome,
    pub grid: Option<GridResult>,
}

/// Result of [`run_scheme`].
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: SchemeName,
    pub state: ModelState,
    pub stages: Vec<ExecutedStage>,
}

impl SchemeRun {
    pub fn provenance(&self) -> &[StageRecord] {
        &self.state.provenance
    }
}

/// Memoizes stage prefixes shared by several schemes (for example the
/// multilabel pretraining used by four of them). Runs are deterministic, so
/// reusing a prefix does not change any result.
#[derive(Debug, Default)]
pub struct SchemeCache {
    prefixes: BTreeMap<String, (ModelState, Vec<ExecutedStage>)>,
}

fn role_data(data: &SchemeData, role: DatasetRole) -> Result<&RoleData> {
    let found = match role {
        DatasetRole::Pretrain => data.pretrain.as_ref(),
        DatasetRole::Source => data.source.as_ref(),
        DatasetRole::Target => data.target.as_ref(),
        DatasetRole::Joint => None,
    };
    found.ok_or_else(|| Error::MissingDataset(format!("scheme needs the {role:?} dataset")))
}

fn scope_blocks(scope: TunedScope, blocks: usize) -> Result<(usize, bool)> {
    match scope {
        TunedScope::All => Ok((blocks, true)),
        TunedScope::HeadOnly => Ok((0, true)),
        TunedScope::LastBlocks(k) if k <= blocks => Ok((k, true)),
        TunedScope::LastBlocks(k) => {
            Err(Error::Config(format!("cannot tune {k} of {blocks} blocks")))
        }
    }
}

fn run_stage(
    state: &mut ModelState,
    spec: &StageSpec,
    index: usize,
    data: &SchemeData,
    config: &SchemeRunConfig,
) -> Result<ExecutedStage> {
    let (tuned_blocks, tune_heads) = scope_blocks(spec.scope, state.spec.blocks())?;
    let stage_seed = derive_seed_str(config.seed, &format!("stage{index}:{:?}", spec.role));
    let (train, validation, tasks, optimizers, name): (
        TrainSet,
        TrainSet,
        Vec<String>,
        Vec<OptimizerConfig>,
        &str,
    ) = match spec.role {
        DatasetRole::Pretrain => {
            let d = role_data(data, spec.role)?;
            (
                d.train.clone(),
                d.validation.clone(),
                d.tasks(),
                vec![config.pretrain_optimizer.clone()],
                "multilabel_pretrain",
            )
        }
        DatasetRole::Source => {
            let d = role_data(data, spec.role)?;
            (
                d.train.clone(),
                d.validation.clone(),
                vec![config.source_task.clone()],
                vec![config.source_optimizer.clone()],
                "source",
            )
        }
        DatasetRole::Target => {
            let d = role_data(data, spec.role)?;
            (
                d.train.clone(),
                d.validation.clone(),
                vec![config.target_task.clone()],
                config.final_grid.clone(),
                "target",
            )
        }
        DatasetRole::Joint => {
            let s = role_data(data, DatasetRole::Source)?;
            let t = role_data(data, DatasetRole::Target)?;
            let only = |set: &TrainSet, task: &str| TrainSet {
                images: set.images.clone(),
                labels: set
                    .labels
                    .iter()
                    .filter(|(k, _)| *k == task)
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect(),
            };
            (
                only(&s.train, &config.source_task).concat(&only(&t.train, &config.target_task))?,
                only(&s.validation, &config.source_task)
                    .concat(&only(&t.validation, &config.target_task))?,
                vec![config.source_task.clone(), config.target_task.clone()],
                config.final_grid.clone(),
                "multitask",
            )
        }
    };
    let optimizers: Vec<OptimizerConfig> = optimizers
        .into_iter()
        .map(|mut o| {
            o.seed = stage_seed;
            o
        })
        .collect();
    let stage = StageConfig {
        name: name.into(),
        tasks,
        tuned_blocks,
        tune_heads,
        optimizer: optimizers[0].clone(),
    };
    let (outcome, grid) = if optimizers.len() > 1 {
        let (best, outcome, grid) = grid_select(state, &train, &validation, &stage, &optimizers)?;
        *state = best;
        (outcome, Some(grid))
    } else {
        (train_stage(state, &train, &validation, &stage)?, None)
    };
    Ok(ExecutedStage {
        role: spec.role,
        scope: spec.scope,
        tuned_blocks,
        tune_heads,
        trainable_params: state.trainable_param_count(),
        outcome,
        grid,
    })
}

/// Multilabel pretraining with restarts; keeps the restart with the best
/// mean validation AUROC and discards its heads.
fn pretrain(
    spec: &StageSpec,
    data: &SchemeData,
    config: &SchemeRunConfig,
) -> Result<(ModelState, ExecutedStage)> {
    let mut best: Option<(f64, ModelState, ExecutedStage)> = None;
    let mut metrics = Vec::new();
    for restart in 0..config.pretrain_restarts.max(1) {
        let seed = derive_seed_str(config.seed, &format!("pretrain-restart{restart}"));
        let mut state = ModelState::init(config.model.clone(), seed)?;
        let restart_cfg = SchemeRunConfig {
            seed,
            ..config.clone()
        };
        let stage = run_stage(&mut state, spec, 0, data, &restart_cfg)?;
        let metric = stage
            .outcome
            .best
            .as_ref()
            .map_or(f64::NEG_INFINITY, |b| b.metric);
        metrics.push(metric);
        if best.as_ref().is_none_or(|b| metric > b.0) {
            best = Some((metric, state, stage));
        }
    }
    let (_, mut state, stage) = best.unwrap();
    state.heads.clear();
    log::info!(
        "pretraining restarts: metrics {metrics:?}, median {:.4}",
        median(&metrics)
    );
    Ok((state, stage))
}

/// Runs a scheme's stages in order and returns the final model.
///
/// Heads of pretraining and source stages are discarded before the next
/// stage; the returned state keeps only the heads of the final stage.
pub fn run_scheme(
    scheme: &SchemeConfig,
    data: &SchemeData,
    config: &SchemeRunConfig,
    mut cache: Option<&mut SchemeCache>,
) -> Result<SchemeRun> {
    config.model.validate()?;
    for spec in scheme.stages() {
        match spec.role {
            DatasetRole::Joint => {
                role_data(data, DatasetRole::Source)?;
                role_data(data, DatasetRole::Target)?;
            }
            role => {
                role_data(data, role)?;
            }
        }
    }
    let mut state: Option<ModelState> = None;
    let mut stages = Vec::new();
    let mut key = format!("{:?}|{}", config, config.seed);
    for (i, spec) in scheme.pretrain_stages.iter().enumerate() {
        let fingerprint = role_data(data, spec.role)
            .map(|d| format!("{}/{}", d.train.fingerprint(), d.validation.fingerprint()))
            .unwrap_or_default();
        key.push_str(&format!("|{:?}:{:?}:{fingerprint}", spec.role, spec.scope));
        if let Some((s, st)) = cache.as_ref().and_then(|c| c.prefixes.get(&key)) {
            state = Some(s.clone());
            stages = st.clone();
            continue;
        }
        let executed = if spec.role == DatasetRole::Pretrain && state.is_none() {
            let (s, stage) = pretrain(spec, data, config)?;
            state = Some(s);
            stage
        } else {
            let current = match state.as_mut() {
                Some(s) => s,
                None => state.insert(ModelState::init(config.model.clone(), config.seed)?),
            };
            let stage = run_stage(current, spec, i, data, config)?;
            current.heads.clear();
            stage
        };
        stages.push(executed);
        if let Some(c) = cache.as_mut() {
            c.prefixes
                .insert(key.clone(), (state.clone().unwrap(), stages.clone()));
        }
    }
    let mut state = match state {
        Some(s) => s,
        None => ModelState::init(config.model.clone(), config.seed)?,
    };
    let index = scheme.pretrain_stages.len();
    stages.push(run_stage(
        &mut state,
        &scheme.final_stage,
        index,
        data,
        config,
    )?);
    Ok(SchemeRun {
        scheme: scheme.name,
        state,
        stages,
    })
}
