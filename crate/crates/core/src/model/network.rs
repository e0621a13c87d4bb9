use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::*;
use crate::error::{Error, Result};
use crate::rng::rng_for_str;

/// Pixel mean and standard deviation of a uniform distribution on `[0, 1]`.
const INPUT_MEAN: f64 = 0.5;
const INPUT_STD: f64 = 0.288_675_134_594_812_9;

/// Architecture of the encoder: one 3x3 convolution stage per entry of
/// `widths`, each followed by batch normalization, ReLU and, except for the
/// last, 2x2 average pooling. Global average pooling of the last stage yields the features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_side: usize,
    /// Output channels per block; the last entry is the feature width.
    pub widths: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_side: 64,
            widths: vec![16, 32, 64, 256],
        }
    }
}

impl ModelSpec {
    pub fn new(input_side: usize, widths: Vec<usize>) -> Self {
        Self { input_side, widths }
    }

    pub fn blocks(&self) -> usize {
        self.widths.len()
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    /// Spatial side of the final feature maps.
    pub fn final_side(&self) -> usize {
        self.input_side >> self.blocks().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(
                "model needs at least one block of non-zero width".into(),
            ));
        }
        let downsample = 1usize << (self.blocks() - 1);
        if self.input_side == 0 || !self.input_side.is_multiple_of(downsample) {
            return Err(Error::Config(format!(
                "input side {} must be a positive multiple of {downsample}",
                self.input_side
            )));
        }
        Ok(())
    }
}

/// One convolution stage: `weight` is `(out, in * 9)`; `scale` and `bias`
/// are the per-channel affine map applied after normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub weight: Array2<f64>,
    pub scale: Array1<f64>,
    pub bias: Array1<f64>,
    /// Moment estimates used for normalization outside training.
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl ConvBlock {
    pub fn param_count(&self) -> usize {
        self.weight.len() + self.scale.len() + self.bias.len()
    }
}

/// Gradient of one block's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub weight: Array2<f64>,
    pub scale: Array1<f64>,
    pub bias: Array1<f64>,
}

/// Whether normalization uses batch moments (training) or the running
/// estimates (evaluation, and always for frozen blocks).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Train,
    Eval,
}

/// Affine map from features to one logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weight: Array1<f64>,
    pub bias: f64,
}

impl Head {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: Array1::zeros(dim),
            bias: 0.0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + 1
    }
}

/// Which parameter groups an optimizer may change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableMask {
    pub blocks: Vec<bool>,
    pub heads: bool,
}

/// One applied training stage, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub tasks: Vec<String>,
    /// Number of tuned encoder blocks counted from the end.
    pub tuned_blocks: usize,
    pub tune_heads: bool,
    pub detail: String,
}

/// Encoder and head parameters plus training bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub blocks: Vec<ConvBlock>,
    pub heads: BTreeMap<String, Head>,
    pub trainable: TrainableMask,
    pub provenance: Vec<StageRecord>,
}

/// Gradients with the same layout as the parameters; `None` for groups
/// that are frozen.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub blocks: Vec<Option<BlockGrad>>,
    pub heads: BTreeMap<String, Head>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    /// Index of the first block that was run.
    start: usize,
    pass: Pass,
    /// Normalized pre-affine activations of each block.
    normalized: Vec<Array4<f64>>,
    inv_std: Vec<Array1<f64>>,
    /// Batch mean, biased variance, and element count per channel (train pass).
    moments: Vec<(Array1<f64>, Array1<f64>, usize)>,
    /// Unfolded input of each block.
    cols: Vec<Array2<f64>>,
    /// Input shape of each block.
    input_dims: Vec<(usize, usize, usize, usize)>,
    /// Rectified (pre-pool) output of each block.
    activations: Vec<Array4<f64>>,
    pub features: Array2<f64>,
}

impl ModelState {
    /// He-initialized encoder without heads; fully trainable.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_for_str(seed, "model-init");
        let mut blocks = Vec::with_capacity(spec.blocks());
        let mut cin = 1;
        for &cout in &spec.widths {
            let fan_in = cin * 9;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            blocks.push(ConvBlock {
                weight: Array2::from_shape_simple_fn((cout, fan_in), || normal.sample(&mut rng)),
                scale: Array1::ones(cout),
                bias: Array1::zeros(cout),
                running_mean: Array1::zeros(cout),
                running_var: Array1::ones(cout),
            });
            cin = cout;
        }
        let trainable = TrainableMask {
            blocks: vec![true; spec.blocks()],
            heads: true,
        };
        Ok(Self {
            spec,
            blocks,
            heads: BTreeMap::new(),
            trainable,
            provenance: vec![StageRecord {
                name: "random_init".into(),
                tasks: vec![],
                tuned_blocks: 0,
                tune_heads: false,
                detail: format!("seed {seed}; no ImageNet-style pretrained weights"),
            }],
        })
    }

    /// Initialized model with one zero head per task.
    pub fn with_heads(spec: ModelSpec, tasks: &[&str], seed: u64) -> Result<Self> {
        let mut state = Self::init(spec, seed)?;
        state.attach_multitask_heads(tasks)?;
        Ok(state)
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.blocks.iter().map(ConvBlock::param_count).sum()
    }

    pub fn head_param_count(&self) -> usize {
        self.heads.values().map(Head::param_count).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        let enc: usize = self
            .blocks
            .iter()
            .zip(&self.trainable.blocks)
            .filter(|(_, &t)| t)
            .map(|(b, _)| b.param_count())
            .sum();
        enc + if self.trainable.heads {
            self.head_param_count()
        } else {
            0
        }
    }

    /// Makes the last `k` blocks trainable and freezes the rest.
    pub fn set_trainable(&mut self, k: usize, tune_heads: bool) -> Result<()> {
        let b = self.spec.blocks();
        if k > b {
            return Err(Error::Config(format!("cannot tune {k} of {b} blocks")));
        }
        self.trainable = TrainableMask {
            blocks: (0..b).map(|i| i >= b - k).collect(),
            heads: tune_heads,
        };
        Ok(())
    }

    /// Adds one zero-initialized head per task.
    pub fn attach_multitask_heads(&mut self, tasks: &[&str]) -> Result<()> {
        if tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].contains(t) || self.heads.contains_key(*t) {
                return Err(Error::DuplicateTask(t.to_string()));
            }
        }
        for t in tasks {
            self.heads
                .insert(t.to_string(), Head::zeros(self.feature_dim()));
        }
        Ok(())
    }

    /// Drops every head not in `keep`.
    pub fn retain_heads(&mut self, keep: &[&str]) {
        self.heads.retain(|k, _| keep.contains(&k.as_str()));
    }

    pub fn head(&self, task: &str) -> Result<&Head> {
        self.heads
            .get(task)
            .ok_or_else(|| Error::MissingHead(task.to_string()))
    }

    fn check_input(&self, images: &Array3<f64>) -> Result<()> {
        let (_, h, w) = images.dim();
        let d = self.spec.input_side;
        if h != d || w != d {
            return Err(Error::Shape(format!(
                "expected {d}x{d} images, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Runs the encoder on `(N, d, d)` images in evaluation mode, keeping
    /// what backward needs.
    pub fn forward_cached(&self, images: &Array3<f64>) -> Result<ForwardCache> {
        self.check_input(images)?;
        self.forward_pass(&Self::as_channels(images), 0, Pass::Eval)
    }

    /// Like [`Self::forward_cached`] but normalizing with batch moments.
    pub fn forward_train(&self, images: &Array3<f64>) -> Result<ForwardCache> {
        self.check_input(images)?;
        self.forward_pass(&Self::as_channels(images), 0, Pass::Train)
    }

    /// Convolution, normalization and rectification of block `i`.
    fn run_block(&self, i: usize, x: &Array4<f64>, pass: Pass) -> BlockOutput {
        let block = &self.blocks[i];
        let (conv, col) = conv_forward(x, &block.weight);
        let (mean, var) = match pass {
            Pass::Train => channel_moments(&conv),
            Pass::Eval => (block.running_mean.clone(), block.running_var.clone()),
        };
        let count = conv.len() / conv.dim().0.max(1);
        let (mut out, normalized, inv_std) =
            batch_norm_forward(&conv, &mean, &var, &block.scale, &block.bias);
        relu_inplace(&mut out);
        BlockOutput {
            activation: out,
            col,
            normalized,
            inv_std,
            moments: (mean, var, count),
        }
    }

    /// Adds the channel axis and standardizes pixels. Equalized images are
    /// roughly uniform on `[0, 1]`, so a fixed affine map centers them.
    fn as_channels(images: &Array3<f64>) -> Array4<f64> {
        let (n, h, w) = images.dim();
        images
            .mapv(|v| (v - INPUT_MEAN) / INPUT_STD)
            .into_shape_with_order((1, n, h, w))
            .unwrap()
    }

    /// Output of blocks `0..upto` as `(C, N, h, w)`; the input of block `upto`.
    pub fn encode_prefix(&self, images: &Array3<f64>, upto: usize) -> Result<Array4<f64>> {
        self.check_input(images)?;
        let mut x = Self::as_channels(images);
        let last = self.blocks.len() - 1;
        for i in 0..upto.min(self.blocks.len()) {
            let out = self.run_block(i, &x, Pass::Eval).activation;
            x = if i < last { avg_pool(&out) } else { out };
        }
        Ok(x)
    }

    /// Runs blocks `start..` on the output of [`Self::encode_prefix`] in
    /// evaluation mode.
    pub fn forward_cached_from(&self, input: &Array4<f64>, start: usize) -> Result<ForwardCache> {
        self.forward_pass(input, start, Pass::Eval)
    }

    /// Runs blocks `start..` on the output of [`Self::encode_prefix`].
    pub fn forward_pass(
        &self,
        input: &Array4<f64>,
        start: usize,
        pass: Pass,
    ) -> Result<ForwardCache> {
        let side = self.spec.input_side >> start;
        let channels = if start == 0 {
            1
        } else {
            self.spec.widths[start - 1]
        };
        let (c, _, h, w) = input.dim();
        if start >= self.blocks.len() || (c, h, w) != (channels, side, side) {
            return Err(Error::Shape(format!(
                "block {start} expects {channels}x{side}x{side} input, got {c}x{h}x{w}"
            )));
        }
        let mut x = input.to_owned();
        let n_run = self.blocks.len() - start;
        let mut cols = Vec::with_capacity(n_run);
        let mut input_dims = Vec::with_capacity(n_run);
        let mut activations = Vec::with_capacity(n_run);
        let mut normalized = Vec::with_capacity(n_run);
        let mut inv_std = Vec::with_capacity(n_run);
        let mut moments = Vec::with_capacity(n_run);
        let last = self.blocks.len() - 1;
        for i in start..self.blocks.len() {
            input_dims.push(x.dim());
            let out = self.run_block(i, &x, pass);
            x = if i < last {
                avg_pool(&out.activation)
            } else {
                out.activation.clone()
            };
            cols.push(out.col);
            activations.push(out.activation);
            normalized.push(out.normalized);
            inv_std.push(out.inv_std);
            if pass == Pass::Train {
                moments.push(out.moments);
            }
        }
        Ok(ForwardCache {
            start,
            pass,
            normalized,
            inv_std,
            moments,
            cols,
            input_dims,
            features: global_avg_pool(&x),
            activations,
        })
    }

    /// Final spatial maps `(C, N, h, w)` and pooled features `(N, C)`.
    pub fn feature_maps(&self, images: &Array3<f64>) -> Result<(Array4<f64>, Array2<f64>)> {
        let mut cache = self.forward_cached(images)?;
        let maps = cache.activations.pop().unwrap();
        Ok((maps, cache.features))
    }

    /// Encoder features `(N, feature_dim)`.
    pub fn features(&self, images: &Array3<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(images)?.features)
    }

    /// Head logit for a batch of feature vectors.
    pub fn head_logits(&self, task: &str, features: &Array2<f64>) -> Result<Array1<f64>> {
        let head = self.head(task)?;
        Ok(features.dot(&head.weight) + head.bias)
    }

    /// Per-task probabilities for a batch of images.
    pub fn forward(&self, images: &Array3<f64>) -> Result<BTreeMap<String, Array1<f64>>> {
        let features = self.features(images)?;
        self.predict_from_features(&features)
    }

    pub fn predict_from_features(
        &self,
        features: &Array2<f64>,
    ) -> Result<BTreeMap<String, Array1<f64>>> {
        self.heads
            .keys()
            .map(|t| Ok((t.clone(), self.head_logits(t, features)?.mapv(sigmoid))))
            .collect()
    }

    /// Backpropagates logit gradients `(N,)` per task through heads and the
    /// trainable part of the encoder.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &BTreeMap<String, Array1<f64>>,
    ) -> Result<Gradients> {
        let (n, f) = cache.features.dim();
        let mut d_features = Array2::<f64>::zeros((n, f));
        let mut heads = BTreeMap::new();
        for (task, g) in d_logits {
            let head = self.head(task)?;
            if self.trainable.heads {
                heads.insert(
                    task.clone(),
                    Head {
                        weight: cache.features.t().dot(g),
                        bias: g.sum(),
                    },
                );
            }
            d_features += &g
                .view()
                .insert_axis(Axis(1))
                .dot(&head.weight.view().insert_axis(Axis(0)));
        }

        let mut blocks: Vec<Option<BlockGrad>> = vec![None; self.blocks.len()];
        let Some(first_trainable) = self.trainable.blocks.iter().position(|&t| t) else {
            return Ok(Gradients { blocks, heads });
        };
        let s = cache.start;
        if first_trainable < s {
            return Err(Error::Shape(format!(
                "block {first_trainable} is trainable but the forward pass started at block {s}"
            )));
        }
        let last = self.blocks.len() - 1;
        let act = &cache.activations[last - s];
        let mut grad = global_avg_pool_backward(&d_features, (act.dim().2, act.dim().3));
        for i in (first_trainable..=last).rev() {
            if i < last {
                grad = avg_pool_backward(&grad);
            }
            relu_backward(&mut grad, &cache.activations[i - s]);
            let (d_conv, d_scale, d_bias) = batch_norm_backward(
                &grad,
                &cache.normalized[i - s],
                &self.blocks[i].scale,
                &cache.inv_std[i - s],
                cache.pass == Pass::Train,
            );
            let need_input = i > first_trainable;
            let (dw, dx) = conv_backward(
                &d_conv,
                &cache.cols[i - s],
                &self.blocks[i].weight,
                cache.input_dims[i - s],
                need_input,
            );
            if self.trainable.blocks[i] {
                blocks[i] = Some(BlockGrad {
                    weight: dw,
                    scale: d_scale,
                    bias: d_bias,
                });
            }
            if let Some(dx) = dx {
                grad = dx;
            }
        }
        Ok(Gradients { blocks, heads })
    }

    /// Folds the batch moments of a training pass into the running
    /// estimates of the trainable blocks it covered.
    pub fn update_running_moments(&mut self, cache: &ForwardCache, momentum: f64) {
        for (j, (mean, var, count)) in cache.moments.iter().enumerate() {
            let i = cache.start + j;
            if !self.trainable.blocks[i] {
                continue;
            }
            let unbias = if *count > 1 {
                *count as f64 / (*count - 1) as f64
            } else {
                1.0
            };
            let block = &mut self.blocks[i];
            block
                .running_mean
                .zip_mut_with(mean, |r, &m| *r = (1.0 - momentum) * *r + momentum * m);
            block.running_var.zip_mut_with(var, |r, &v| {
                *r = (1.0 - momentum) * *r + momentum * v * unbias
            });
        }
    }

    /// SHA-256 over the encoder parameters and running moments.
    pub fn encoder_hash(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.blocks {
            hash_block(&mut h, b);
        }
        hex::encode(h.finalize())
    }

    /// SHA-256 of one block's parameters and running moments.
    pub fn block_hash(&self, i: usize) -> String {
        let mut h = Sha256::new();
        hash_block(&mut h, &self.blocks[i]);
        hex::encode(h.finalize())
    }

    /// SHA-256 over the architecture, encoder, and every head.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.spec.input_side.to_le_bytes());
        for w in &self.spec.widths {
            h.update(w.to_le_bytes());
        }
        h.update(self.encoder_hash().as_bytes());
        for (task, head) in &self.heads {
            h.update(task.as_bytes());
            hash_array(&mut h, head.weight.iter());
            h.update(head.bias.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn hash_block(h: &mut Sha256, b: &ConvBlock) {
    for part in [&b.scale, &b.bias, &b.running_mean, &b.running_var] {
        hash_array(h, part.iter());
    }
    hash_array(h, b.weight.iter());
}

struct BlockOutput {
    activation: Array4<f64>,
    col: Array2<f64>,
    normalized: Array4<f64>,
    inv_std: Array1<f64>,
    moments: (Array1<f64>, Array1<f64>, usize),
}

fn hash_array<'a>(h: &mut Sha256, values: impl Iterator<Item = &'a f64>) {
    for v in values {
        h.update(v.to_le_bytes());
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use rand::Rng;

    fn images(n: usize, d: usize, seed: u64) -> Array3<f64> {
        let mut rng = rng_for_str(seed, "images");
        Array3::from_shape_simple_fn((n, d, d), || rng.random::<f64>())
    }

    #[test]
    fn prefix_then_suffix_equals_full_forward() {
        let state = ModelState::with_heads(ModelSpec::new(16, vec![4, 8, 8]), &["chf"], 4).unwrap();
        let x = images(3, 16, 8);
        let full = state.features(&x).unwrap();
        for k in 0..3 {
            let prefix = state.encode_prefix(&x, k).unwrap();
            assert_eq!(
                state.forward_cached_from(&prefix, k).unwrap().features,
                full
            );
        }
        let maps = state.encode_prefix(&x, 3).unwrap();
        assert_eq!(maps.dim(), (8, 3, 4, 4));
        assert!(state.forward_cached_from(&maps, 1).is_err());
    }

    #[test]
    fn zero_head_outputs_half() {
        let state = ModelState::with_heads(ModelSpec::new(16, vec![4, 8]), &["chf"], 0).unwrap();
        let p = state.forward(&images(3, 16, 1)).unwrap();
        assert!(p["chf"].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn batch_invariance_and_decomposition() {
        let mut state =
            ModelState::with_heads(ModelSpec::new(16, vec![4, 8]), &["chf"], 2).unwrap();
        state.heads.get_mut("chf").unwrap().weight.fill(0.3);
        let x = images(4, 16, 3);
        let all = state.forward(&x).unwrap()["chf"].clone();
        let one = state
            .forward(&x.slice(s![2..3, .., ..]).to_owned())
            .unwrap()["chf"]
            .clone();
        assert_eq!(all[2], one[0]);
        let f = state.features(&x).unwrap();
        assert_eq!(f.ncols(), state.feature_dim());
        let via = state.head_logits("chf", &f).unwrap().mapv(sigmoid);
        assert_eq!(via, all);
        assert!(all.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn features_ignore_heads() {
        let a = ModelState::with_heads(ModelSpec::new(16, vec![4, 8]), &["chf"], 5).unwrap();
        let mut b = a.clone();
        b.heads.get_mut("chf").unwrap().weight.fill(1.0);
        let x = images(2, 16, 0);
        assert_eq!(a.features(&x).unwrap(), b.features(&x).unwrap());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let state = ModelState::with_heads(ModelSpec::new(16, vec![4, 8]), &["chf"], 0).unwrap();
        assert!(matches!(
            state.forward(&images(1, 8, 0)),
            Err(Error::Shape(_))
        ));
        assert!(ModelSpec::new(18, vec![4, 4, 4]).validate().is_err());
    }

    #[test]
    fn trainable_regimes() {
        let mut state =
            ModelState::with_heads(ModelSpec::new(16, vec![4, 8, 8]), &["a"], 0).unwrap();
        state.set_trainable(0, true).unwrap();
        assert_eq!(state.trainable_param_count(), state.feature_dim() + 1);
        state.set_trainable(3, true).unwrap();
        assert_eq!(
            state.trainable_param_count(),
            state.encoder_param_count() + state.head_param_count()
        );
        state.set_trainable(1, false).unwrap();
        assert_eq!(state.trainable.blocks, vec![false, false, true]);
        assert!(state.set_trainable(4, true).is_err());
    }

    #[test]
    fn multitask_heads() {
        let mut state = ModelState::init(ModelSpec::new(16, vec![4, 8]), 0).unwrap();
        state.attach_multitask_heads(&["pneumonia", "chf"]).unwrap();
        assert_eq!(state.heads.len(), 2);
        assert!(state.heads.values().all(|h| h.param_count() == 9));
        assert!(matches!(
            state.attach_multitask_heads(&["x", "x"]),
            Err(Error::DuplicateTask(_))
        ));
        assert!(matches!(
            state.attach_multitask_heads(&["chf"]),
            Err(Error::DuplicateTask(_))
        ));
        assert!(state.attach_multitask_heads(&[]).is_err());
    }

    #[test]
    fn default_head_is_small_relative_to_encoder() {
        let state = ModelState::with_heads(ModelSpec::default(), &["chf"], 0).unwrap();
        assert_eq!(state.feature_dim(), 256);
        assert!((state.head_param_count() as f64) < 0.05 * state.encoder_param_count() as f64);
    }

    #[test]
    fn single_task_gradient_leaves_other_head_alone() {
        let mut state =
            ModelState::with_heads(ModelSpec::new(8, vec![3, 4]), &["a", "b"], 1).unwrap();
        state.heads.get_mut("b").unwrap().weight.fill(0.5);
        let cache = state.forward_cached(&images(2, 8, 9)).unwrap();
        let mut d = BTreeMap::new();
        d.insert("a".to_string(), Array1::from(vec![0.3, -0.2]));
        let g = state.backward(&cache, &d).unwrap();
        assert!(g.heads.contains_key("a") && !g.heads.contains_key("b"));
    }
}
