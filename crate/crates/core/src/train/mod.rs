//! Objective, optimizer, schedule, training loop, evaluation and
//! checkpoints.

mod checkpoint;
mod eval;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{
    apply_snapshot, load_checkpoint, load_weights, read_checkpoint, restore_into, save_checkpoint, save_weights,
    write_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use eval::{evaluate_cases, evaluate_patches, Evaluation};
pub use loss::{ce_loss, dice_loss, one_hot, total_loss, LossConfig, PROB_FLOOR};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, OptimState};
pub use trainer::{
    history_csv, snapshot, stream_rng, train, train_step, validation_patches, BestSnapshot, EpochRecord,
    StepRecord, TrainConfig, TrainState,
};
