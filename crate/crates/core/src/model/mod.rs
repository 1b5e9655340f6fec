//! Link prediction between a query target and the nodes of a scene graph.

mod baseline;
mod dataset;
mod eval;
mod network;
mod train;

use std::path::PathBuf;

use csg_tensor::{CheckpointError, TensorError};
use thiserror::Error;

use crate::csg::CsgError;

pub use baseline::StatisticalBaseline;
pub use dataset::{build_sample, build_samples, build_scene_samples, graph_input, GraphInput, GraphSample};
pub use eval::{accuracy, evaluate_accuracy, label_rate, per_scene_scores};
pub use network::{bce_loss, bce_value, CsgTl, ModelConfig, ATTENTION_EPS, LEAKY_SLOPE, PROB_CLAMP};
pub use train::{load_model, model_from_parts, save_model, sidecar_path, train, CheckpointMeta, EpochLog, OptimizerChoice, TrainConfig, META_FORMAT};

const BUNDLED_CHECKPOINT: &[u8] = include_bytes!("../../data/csgtl-default.ckpt");
const BUNDLED_META: &str = include_str!("../../data/csgtl-default.json");

/// The default checkpoint shipped with the crate: default hyperparameters,
/// trained on the train split of the 500-scene seed-7 corpus of the bundled
/// generator config.
pub fn bundled_model() -> Result<(CsgTl, CheckpointMeta), ModelError> {
    model_from_parts(BUNDLED_CHECKPOINT, BUNDLED_META)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Csg(#[from] CsgError),
    #[error("graph has no target node")]
    MissingTarget,
    #[error("graph has {0} target nodes, expected one")]
    MultipleTargets(usize),
    #[error("expected {expected} labels, got {got}")]
    LabelMismatch { expected: usize, got: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
