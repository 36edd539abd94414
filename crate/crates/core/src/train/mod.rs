//! Adam, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod trainer;

pub use adam::{clip_global_norm, global_norm, Adam, AdamConfig, ParamGroup};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use trainer::{
    batch_concept_stats, epoch_batches, fit, EpochMetrics, PreparedCaption, PreparedData,
    TrainConfig, TrainState,
};

/// A checkpoint is the complete training state.
pub type Checkpoint = TrainState;
