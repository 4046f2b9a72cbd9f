//! Model assembly: wires the layer blocks into the three sequence-to-one
//! forecaster variants and exposes one forward/backward pair over the whole
//! stack.
//!
//! Wiring per variant (all recurrent layers return sequences):
//!
//! - `attention_bilstm`: input -> BiLSTM -> BN -> ReLU -> [LSTM -> BN -> ReLU]*
//!   -> attention -> GAP -> dense(linear)
//! - `attention_lstm`: the first layer is a plain LSTM instead of a BiLSTM
//! - `bilstm`: no attention; GAP pools the post-ReLU sequence directly

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    bilstm_backward, bilstm_forward, gap_backward, gap_forward, lstm_layer_backward,
    lstm_layer_forward, relu_backward, relu_forward, Activation, Attention, AttentionCache,
    BatchNorm, BatchNormCache, BiLstm, BiLstmCache, Dense, DenseCache, LstmLayerCache, LstmParams,
    Mode, ParamBlock, RunningUpdate,
};
use crate::tensor::Tensor;

/// Default batch-norm constants.
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AttentionBilstm,
    AttentionLstm,
    Bilstm,
}

impl Variant {
    pub fn has_attention(self) -> bool {
        matches!(self, Variant::AttentionBilstm | Variant::AttentionLstm)
    }

    pub fn is_bidirectional(self) -> bool {
        matches!(self, Variant::AttentionBilstm | Variant::Bilstm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::AttentionBilstm => "attention_bilstm",
            Variant::AttentionLstm => "attention_lstm",
            Variant::Bilstm => "bilstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "attention_bilstm" => Ok(Variant::AttentionBilstm),
            "attention_lstm" => Ok(Variant::AttentionLstm),
            "bilstm" => Ok(Variant::Bilstm),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (valid: attention_bilstm, attention_lstm, bilstm)"
            ))),
        }
    }
}

/// Architecture hyperparameters. `input_features` counts the
/// time-difference channel exactly once; `hidden_sizes[0]` is the width of
/// the first recurrent layer (per direction when bidirectional) and any
/// further entries add unidirectional LSTM layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub time_steps: usize,
    pub input_features: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.time_steps < 1 {
            return Err(Error::Config("time_steps must be at least 1".into()));
        }
        if self.output_dim < 1 {
            return Err(Error::Config("output_dim must be at least 1".into()));
        }
        if self.input_features < 1 {
            return Err(Error::Config("input_features must be at least 1".into()));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::Config("hidden_sizes must not be empty".into()));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Stage {
    BiLstm(BiLstm),
    Lstm(LstmParams),
    BatchNorm(BatchNorm),
    Relu,
    Attention(Attention),
    Gap,
    Dense(Dense),
}

#[derive(Debug)]
enum StageCache {
    BiLstm(BiLstmCache),
    Lstm(LstmLayerCache),
    BatchNorm(BatchNormCache),
    Relu(Vec<bool>),
    Attention(AttentionCache),
    Gap { time: usize },
    Dense(DenseCache),
}

/// A built forecaster: configuration plus the ordered parameter blocks.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    stages: Vec<Stage>,
}

/// Result of a forward pass. Train-mode batch norm reports its running
/// statistics here instead of mutating the model, so the forward itself is
/// a pure function; `apply_bn_updates` commits them during training.
#[derive(Debug)]
pub struct ModelForward {
    pub output: Tensor,
    pub alpha: Option<Tensor>,
    caches: Vec<StageCache>,
    bn_updates: Vec<(usize, RunningUpdate)>,
}

impl Model {
    /// Deterministic seeded construction from a config.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut stages = Vec::new();
        let mut width = config.input_features;

        for (k, &h) in config.hidden_sizes.iter().enumerate() {
            let n = k + 1;
            if k == 0 && config.variant.is_bidirectional() {
                stages.push(Stage::BiLstm(BiLstm::init(
                    &format!("bilstm{n}"),
                    width,
                    h,
                    &mut rng,
                )));
                width = 2 * h;
            } else {
                stages.push(Stage::Lstm(LstmParams::init(
                    &format!("lstm{n}"),
                    width,
                    h,
                    &mut rng,
                )));
                width = h;
            }
            stages.push(Stage::BatchNorm(BatchNorm::new(
                &format!("bn{n}"),
                width,
                BN_MOMENTUM,
                BN_EPSILON,
            )?));
            stages.push(Stage::Relu);
        }

        if config.variant.has_attention() {
            stages.push(Stage::Attention(Attention::init("att", width, &mut rng)));
        }
        stages.push(Stage::Gap);
        stages.push(Stage::Dense(Dense::init(
            "out",
            width,
            config.output_dim,
            Activation::Linear,
            &mut rng,
        )));

        Ok(Self { config, stages })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Ordered parameter blocks (declaration order, stable across runs).
    pub fn blocks(&self) -> Vec<&ParamBlock> {
        let mut out = Vec::new();
        for stage in &self.stages {
            match stage {
                Stage::BiLstm(l) => out.extend(l.blocks()),
                Stage::Lstm(l) => out.extend(l.blocks()),
                Stage::BatchNorm(l) => out.extend(l.blocks()),
                Stage::Attention(l) => out.extend(l.blocks()),
                Stage::Dense(l) => out.extend(l.blocks()),
                Stage::Relu | Stage::Gap => {}
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            match stage {
                Stage::BiLstm(l) => out.extend(l.blocks_mut()),
                Stage::Lstm(l) => out.extend(l.blocks_mut()),
                Stage::BatchNorm(l) => out.extend(l.blocks_mut()),
                Stage::Attention(l) => out.extend(l.blocks_mut()),
                Stage::Dense(l) => out.extend(l.blocks_mut()),
                Stage::Relu | Stage::Gap => {}
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for block in self.blocks_mut() {
            block.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Full forward pass. `x` is `[B x T x F]` with `T = config.time_steps`.
    /// Pure: train mode returns pending running-statistics updates rather
    /// than applying them.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<ModelForward> {
        if x.rank() != 3 {
            return Err(Error::Shape(format!(
                "model input must be [B x T x F], got {:?}",
                x.shape()
            )));
        }
        if x.shape()[1] != self.config.time_steps {
            return Err(Error::Shape(format!(
                "input has {} time steps, model expects {}",
                x.shape()[1],
                self.config.time_steps
            )));
        }
        if x.shape()[2] != self.config.input_features {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.shape()[2],
                self.config.input_features
            )));
        }

        let mut current = x.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        let mut bn_updates = Vec::new();
        let mut alpha = None;
        for (idx, stage) in self.stages.iter().enumerate() {
            current = match stage {
                Stage::BiLstm(l) => {
                    let (y, cache) = bilstm_forward(&current, l)?;
                    caches.push(StageCache::BiLstm(cache));
                    y
                }
                Stage::Lstm(l) => {
                    let (y, cache) = lstm_layer_forward(&current, l, true)?;
                    caches.push(StageCache::Lstm(cache));
                    y
                }
                Stage::BatchNorm(l) => {
                    let (y, cache, update) = l.forward(&current, mode)?;
                    caches.push(StageCache::BatchNorm(cache));
                    if let Some(update) = update {
                        bn_updates.push((idx, update));
                    }
                    y
                }
                Stage::Relu => {
                    let (y, mask) = relu_forward(&current);
                    caches.push(StageCache::Relu(mask));
                    y
                }
                Stage::Attention(l) => {
                    let (y, a, cache) = l.forward(&current)?;
                    caches.push(StageCache::Attention(cache));
                    alpha = Some(a);
                    y
                }
                Stage::Gap => {
                    let time = current.shape()[1];
                    let y = gap_forward(&current)?;
                    caches.push(StageCache::Gap { time });
                    y
                }
                Stage::Dense(l) => {
                    let (y, cache) = l.forward(&current)?;
                    caches.push(StageCache::Dense(cache));
                    y
                }
            };
        }
        Ok(ModelForward {
            output: current,
            alpha,
            caches,
            bn_updates,
        })
    }

    /// Commits the running-statistics updates captured by a train-mode
    /// forward.
    pub fn apply_bn_updates(&mut self, forward: &ModelForward) {
        for (idx, update) in &forward.bn_updates {
            if let Stage::BatchNorm(l) = &mut self.stages[*idx] {
                l.apply_update(update);
            }
        }
    }

    /// Reverse pass: accumulates parameter gradients for the forward
    /// captured in `fwd` and returns the gradient w.r.t. the model input.
    pub fn backward(&mut self, fwd: &ModelForward, dloss: &Tensor) -> Result<Tensor> {
        if dloss.shape() != fwd.output.shape() {
            return Err(Error::Shape(format!(
                "loss gradient shape {:?} does not match output {:?}",
                dloss.shape(),
                fwd.output.shape()
            )));
        }
        if fwd.caches.len() != self.stages.len() {
            return Err(Error::Config(
                "stale cache: backward called with a mismatched forward".into(),
            ));
        }
        let mut grad = dloss.clone();
        for (stage, cache) in self.stages.iter_mut().zip(&fwd.caches).rev() {
            grad = match (stage, cache) {
                (Stage::BiLstm(l), StageCache::BiLstm(c)) => bilstm_backward(l, c, &grad)?,
                (Stage::Lstm(l), StageCache::Lstm(c)) => lstm_layer_backward(l, c, &grad)?,
                (Stage::BatchNorm(l), StageCache::BatchNorm(c)) => l.backward(c, &grad)?,
                (Stage::Relu, StageCache::Relu(mask)) => relu_backward(&grad, mask)?,
                (Stage::Attention(l), StageCache::Attention(c)) => l.backward(c, &grad)?,
                (Stage::Gap, StageCache::Gap { time }) => gap_backward(&grad, *time)?,
                (Stage::Dense(l), StageCache::Dense(c)) => l.backward(c, &grad)?,
                _ => {
                    return Err(Error::Config(
                        "stale cache: backward called with a mismatched forward".into(),
                    ))
                }
            };
        }
        Ok(grad)
    }

    /// Pure inference: predictions plus attention weights when the variant
    /// has attention.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let fwd = self.forward(x, Mode::Infer)?;
        Ok((fwd.output, fwd.alpha))
    }
}
