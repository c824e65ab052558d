//! Two-stage training: per-modality pretraining, then fusion fine-tuning on
//! frozen encoders.

mod adam;
mod checkpoint;
mod pipeline;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta, Stage, CONFIG_PREFIX, META_FILE, PARAMS_DIR};
pub use pipeline::{
    accuracy, argmax, evaluate_unimodal, finetune_fusion, predict_unimodal, pretrain_modality,
    MultimodalModel, TrainConfig,
};
