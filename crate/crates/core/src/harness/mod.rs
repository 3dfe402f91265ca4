//! Desk-scale benchmark harness: synthetic multi-task data, tiny MLP
//! classifiers, a deterministic SGD trainer, and accuracy evaluators that
//! plug into the search as fitness functions.
//!
//! Everything here is small enough to train and evaluate in seconds, so the
//! pruning and fusion properties can be exercised end to end in tests.

pub mod data;
pub mod eval;
pub mod model;
pub mod train;

pub use data::{
    load_dataset, make_tasks, save_dataset, Dataset, Split, SyntheticTaskSpec, DEFAULT_CLASS_COUNT,
    DEFAULT_INPUT_DIM,
};
pub use eval::{dataset_accuracy, AccuracyEvaluator};
pub use model::{
    batch_loss, batch_loss_and_gradient, forward_logits, predict, Activation, TinyModelSpec,
};
pub use train::{
    finetune, pretrain, DEFAULT_FINETUNE_STEPS, DEFAULT_LEARNING_RATE, DEFAULT_PRETRAIN_STEPS,
};
