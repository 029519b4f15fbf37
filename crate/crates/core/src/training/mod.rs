//! Teacher-forced optimization: Adam with global-norm clipping, plateau
//! learning-rate decay, early stopping, checkpoints and champion selection.

mod callbacks;
mod champion;
mod checkpoint;
mod optim;
mod trainer;

pub use callbacks::{EarlyStopping, ReduceLrOnPlateau, MIN_DELTA};
pub use champion::{select_champion, Champion};
pub use checkpoint::{
    checkpoint_file_name, epoch_of_file_name, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use optim::{clip_by_global_norm, global_norm, AdamHyper, AdamState, ADAM_EPS, BETA1, BETA2};
pub use trainer::{
    batch_gradients, epoch_order, evaluate_loss, loss_csv, train, BatchGradients, EpochRecord,
    TrainOutputs, TrainSession, TrainingConfig,
};
