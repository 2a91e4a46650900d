//! Training configurations, LR schedule, early stopping, and the three
//! training loops (contrastive heads, autoencoder init, supervised probes).

mod autoencoder;
mod contrastive_loop;
mod probe;

pub use autoencoder::{train_autoencoder, HeadSpec};
pub use contrastive_loop::{
    embed_dataset, embed_rows, load_heads, train_contrastive, ContrastiveHeads, Modality,
};
pub use probe::{train_probe, ProbeConfig, ProbeLabels, ProbeModel, ProbeTask};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrastive::{LossError, NegativeSet};
use crate::dataio::Split;
use crate::neuralcore::{Activation, CheckpointError, Mlp, MlpGradients, NeuralError};
use crate::sampling::SamplingError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid model config: {0}")]
    BadModelConfig(String),
    #[error("invalid train config: {0}")]
    BadTrainConfig(String),
    #[error("{split} split is empty")]
    EmptySplit { split: Split },
    #[error("{split} split has {distinct} distinct videos, need at least 2 for the contrastive loss")]
    TooFewVideos { split: Split, distinct: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: u64 },
    #[error("features have {rows} rows but labels have {labels}")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("class {class} ({name}) has no training examples")]
    EmptyClass { class: usize, name: String },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint config does not describe contrastive heads: {0}")]
    BadCheckpointConfig(String),
}

/// Whether both modalities get a projection head, or only video (projected
/// into the raw audio feature space, audio path identity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    #[default]
    Dual,
    SingleVideoToAudio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    Glorot,
    Autoencoder,
}

/// Full description of a trainable configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub audio_in: usize,
    pub video_in: usize,
    pub hidden: usize,
    pub embed: usize,
    /// Number of dense layers per head (2 = hidden + embedding).
    pub n_layers: usize,
    pub head_mode: HeadMode,
    pub tau: f64,
    pub negative_set: NegativeSet,
    pub init: InitScheme,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            audio_in: 1506,
            video_in: 512,
            hidden: 512,
            embed: 256,
            n_layers: 2,
            head_mode: HeadMode::Dual,
            tau: 1.0,
            negative_set: NegativeSet::Standard,
            init: InitScheme::Glorot,
            dropout: 0.3,
        }
    }
}

/// The named Experiment-1 rows; each maps onto [`ModelConfig`] flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Base,
    Embed512,
    FourLayers,
    SingleHead,
    Tau03,
    AeInit,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Base,
        Variant::Embed512,
        Variant::FourLayers,
        Variant::SingleHead,
        Variant::Tau03,
        Variant::AeInit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Embed512 => "embed512",
            Variant::FourLayers => "four-layers",
            Variant::SingleHead => "single-head",
            Variant::Tau03 => "tau03",
            Variant::AeInit => "ae-init",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    /// Applies this variant's deltas on top of a base config.
    pub fn apply(self, mut cfg: ModelConfig) -> ModelConfig {
        match self {
            Variant::Base => {}
            Variant::Embed512 => cfg.embed = 512,
            Variant::FourLayers => cfg.n_layers = 4,
            Variant::SingleHead => cfg.head_mode = HeadMode::SingleVideoToAudio,
            Variant::Tau03 => cfg.tau = 0.3,
            Variant::AeInit => cfg.init = InitScheme::Autoencoder,
        }
        cfg
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        variant.apply(Self::default())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::BadModelConfig(msg.to_string()));
        if self.audio_in == 0 || self.video_in == 0 || self.hidden == 0 || self.embed == 0 {
            return fail("dimensions must be positive");
        }
        if self.n_layers < 2 {
            return fail("heads need at least 2 layers (hidden + embedding)");
        }
        if !(self.tau > 0.0) {
            return fail("tau must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// `[in, hidden, ..., out]` widths for one head.
    fn head_dims(&self, in_dim: usize, out_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.n_layers + 1);
        dims.push(in_dim);
        dims.extend(std::iter::repeat(self.hidden).take(self.n_layers - 1));
        dims.push(out_dim);
        dims
    }

    /// `None` in single-head mode (audio path is identity).
    pub fn audio_head_dims(&self) -> Option<Vec<usize>> {
        match self.head_mode {
            HeadMode::Dual => Some(self.head_dims(self.audio_in, self.embed)),
            HeadMode::SingleVideoToAudio => None,
        }
    }

    pub fn video_head_dims(&self) -> Vec<usize> {
        match self.head_mode {
            HeadMode::Dual => self.head_dims(self.video_in, self.embed),
            // Project video into the raw audio feature space.
            HeadMode::SingleVideoToAudio => self.head_dims(self.video_in, self.audio_in),
        }
    }

    /// ReLU on hidden layers, sigmoid on the embedding layer.
    pub fn head_activations(&self) -> Vec<Activation> {
        let mut acts = vec![Activation::Relu; self.n_layers - 1];
        acts.push(Activation::Sigmoid);
        acts
    }

    /// Dimensionality of the shared embedding space.
    pub fn embedding_dim(&self) -> usize {
        match self.head_mode {
            HeadMode::Dual => self.embed,
            HeadMode::SingleVideoToAudio => self.audio_in,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_gamma: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            lr0: 0.01,
            lr_gamma: 0.95,
            patience_epochs: 3,
            max_epochs: 200,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::BadTrainConfig(msg.to_string()));
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        if !(self.lr0 > 0.0) {
            return fail("lr0 must be positive");
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return fail("lr_gamma must lie in (0, 1]");
        }
        if self.patience_epochs == 0 {
            return fail("patience_epochs must be at least 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        Ok(())
    }
}

/// Exponential decay: `lr0 * gamma^epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_gamma.powi(epoch as i32)
}

/// Mutable bookkeeping carried across epochs of one run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub current_lr: f64,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            step: 0,
            current_lr: cfg.lr0,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// Stops once the monitored loss has not improved on the best-so-far value
/// for `patience` consecutive epochs (strict improvement, zero tolerance).
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_improvement: usize,
}

pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        StopDecision {
            improved,
            stop: self.since_improvement >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr
            ));
        }
        out
    }
}

/// Plain SGD: `theta' = theta - lr * g`, layer by layer.
pub(crate) fn sgd_step(mlp: &mut Mlp, grads: &MlpGradients, lr: f64) {
    for (layer, (dw, db)) in mlp
        .layers
        .iter_mut()
        .zip(grads.weights.iter().zip(grads.bias.iter()))
    {
        layer.weights.zip_mut_with(dw, |w, &g| *w -= lr * g);
        layer.bias.zip_mut_with(db, |b, &g| *b -= lr * g);
    }
}
