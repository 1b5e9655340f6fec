use std::fs;
use std::path::{Path, PathBuf};

use csg_tensor::{checkpoint_bytes, parse_checkpoint, CheckpointError, GradBuffer, Optimizer, OptimizerKind};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy, CsgTl, GraphSample, ModelConfig, ModelError};
use crate::{defaults, Exec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_graphs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub d_feat: usize,
    pub d_hid: usize,
    pub d_k: usize,
    pub d_mlp: usize,
    pub link_threshold: f64,
    #[serde(default)]
    pub optimizer: OptimizerChoice,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_graphs: defaults::BATCH_GRAPHS,
            epochs: defaults::EPOCHS,
            learning_rate: defaults::LEARNING_RATE,
            seed: defaults::SEED,
            d_feat: defaults::D_FEAT,
            d_hid: defaults::D_HID,
            d_k: defaults::D_K,
            d_mlp: defaults::D_MLP,
            link_threshold: defaults::LINK_THRESHOLD,
            optimizer: OptimizerChoice::Adam,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_feat: self.d_feat,
            d_hid: self.d_hid,
            d_k: self.d_k,
            d_mlp: self.d_mlp,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_graphs == 0 {
            return Err(ModelError::Config("batch_graphs must be at least 1".into()));
        }
        if !(self.link_threshold > 0.0 && self.link_threshold < 1.0) {
            return Err(ModelError::Config(format!("link_threshold {} outside (0, 1)", self.link_threshold)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-graph loss over the epoch's minibatches.
    pub mean_loss: f64,
    /// Accuracy of the predictions made while computing those losses.
    pub train_acc: f64,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Minibatch training with one optimizer step per batch of
/// `cfg.batch_graphs` graphs. Per-graph gradients may be computed in
/// parallel; they are summed in batch order, so results do not depend on
/// `exec`.
///
/// `init` continues from existing weights (with fresh optimizer state) and
/// `first_epoch` numbers the log, so a resumed run reshuffles exactly like an
/// uninterrupted one would.
pub fn train(
    samples: &[GraphSample],
    cfg: &TrainConfig,
    init: Option<CsgTl>,
    first_epoch: usize,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(CsgTl, Vec<EpochLog>), ModelError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut model = match init {
        Some(m) => {
            if m.config != cfg.model_config() {
                return Err(ModelError::Config(format!(
                    "checkpoint dimensions {:?} differ from requested {:?}",
                    m.config,
                    cfg.model_config()
                )));
            }
            m
        }
        None => CsgTl::init(cfg.model_config(), cfg.seed)?,
    };
    let kind = match cfg.optimizer {
        OptimizerChoice::Adam => OptimizerKind::Adam,
        OptimizerChoice::Sgd => OptimizerKind::Sgd,
    };
    let mut opt = Optimizer::new(kind, cfg.learning_rate);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in first_epoch..first_epoch + cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let mut loss_sum = 0.0;
        let mut preds: Vec<Vec<f64>> = vec![Vec::new(); samples.len()];
        for batch in order.chunks(cfg.batch_graphs) {
            let current = &model;
            let results = exec.map(batch, |&i| current.loss_and_grads(&samples[i].input, &samples[i].labels));
            let mut buffer = GradBuffer::zeros_like(&model.params);
            for (&i, r) in batch.iter().zip(results) {
                let (loss, p, grads) = r?;
                loss_sum += loss;
                preds[i] = p;
                buffer.add(&grads);
            }
            let grads = buffer.mean();
            opt.step(&mut model.params, &grads)?;
        }
        let log = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / samples.len() as f64,
            train_acc: accuracy(samples, &preds, cfg.link_threshold)?,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

pub const META_FORMAT: &str = "csg-checkpoint-meta/1";

/// Sidecar stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub config: TrainConfig,
    pub epochs_completed: usize,
}

impl CheckpointMeta {
    pub fn new(config: TrainConfig, epochs_completed: usize) -> Self {
        Self {
            format: META_FORMAT.to_string(),
            config,
            epochs_completed,
        }
    }
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the binary checkpoint and its JSON sidecar, each atomically.
pub fn save_model(path: &Path, model: &CsgTl, meta: &CheckpointMeta) -> Result<(), ModelError> {
    crate::io::write_atomic(path, &checkpoint_bytes(&model.params)).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).expect("meta serializes") + "\n";
    crate::io::write_atomic(&side, text.as_bytes()).map_err(io_err(&side))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(CsgTl, CheckpointMeta), ModelError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    model_from_parts(&bytes, &text).map_err(|e| match e {
        ModelError::Checkpoint(CheckpointError::Malformed(m)) => {
            ModelError::Checkpoint(CheckpointError::Malformed(format!("{}: {m}", side.display())))
        }
        other => other,
    })
}

/// Builds a model from checkpoint bytes and the sidecar's JSON text.
pub fn model_from_parts(checkpoint: &[u8], meta_json: &str) -> Result<(CsgTl, CheckpointMeta), ModelError> {
    let params = parse_checkpoint(checkpoint)?;
    let meta: CheckpointMeta =
        serde_json::from_str(meta_json).map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
    if meta.format != META_FORMAT {
        return Err(CheckpointError::Malformed(format!("unknown metadata format {:?}", meta.format)).into());
    }
    let model = CsgTl::from_params(meta.config.model_config(), params)?;
    Ok((model, meta))
}
