//! Compact transformer encoder with task heads, optimizer and training loop.

mod checkpoint;
mod config;
mod gradcheck;
mod heads;
mod model;
mod optim;
mod params;
mod train;

pub use checkpoint::{
    checkpoint_bytes, parse_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_VERSION,
};
pub use config::{io_to_bio, EncoderConfig, EntityLabel, TrainConfig};
pub use gradcheck::{check_gradient, finite_diff_check, relative_error, GradCheckReport, Probe};
pub use heads::{contrastive_loss, info_nce, mine_hard_negatives, pair_input, sigmoid, ContrastiveBatch};
pub use model::ForwardCache;
pub use optim::{adamw_step, clip_grad_norm, lr_at, AdamState, LrSchedule};
pub use params::{EncoderParams, LayerParams, TensorRef};
pub use train::{
    held_out_examples, held_out_perplexity, prepare_docs, train, BatchLoss, BiEncoderObjective, MlmObjective, Objective,
    PreparedDoc, StepRecord, SupervisedObjective, TrainOutcome,
};
