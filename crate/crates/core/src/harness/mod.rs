//! Training loop, optimiser, evaluation, checkpoints and timeline rendering.

mod checkpoint;
mod config;
mod eval;
mod objective;
mod optim;
mod render;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{EntropyScope, Mode, TrainConfig};
pub use eval::{evaluate, predict, predict_probs, Evaluation, VideoEvaluation};
pub use objective::{build_objective, Objective, ObjectiveOptions, PairInput};
pub use optim::Adam;
pub use render::{class_color, render_ascii, render_svg, Track};
pub use train::{
    compute_gradients, model_config_for, source_masks, steps_per_epoch, train, train_step, train_with, LogEntry,
    StepLosses, TrainLog, TrainState,
};
