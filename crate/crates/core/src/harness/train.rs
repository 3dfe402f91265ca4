//! Plain minibatch SGD for the tiny classifiers: one shared pre-training run
//! over pooled task data, then per-task fine-tuning from that base.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::harness::data::{Dataset, Split, SyntheticTaskSpec};
use crate::harness::model::{batch_loss_and_gradient, TinyModelSpec};

/// Defaults calibrated so fine-tuned task accuracy clears 0.9 while heavy
/// pruning still visibly hurts (leaving the search something to recover).
pub const DEFAULT_PRETRAIN_STEPS: usize = 300;
pub const DEFAULT_FINETUNE_STEPS: usize = 400;
pub const DEFAULT_LEARNING_RATE: f64 = 0.25;
pub const BATCH_SIZE: usize = 32;

fn sgd(
    spec: &TinyModelSpec,
    values: &mut [f32],
    data: &Dataset,
    steps: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = vec![0.0f64; spec.param_count()];
    let mut indices = vec![0usize; BATCH_SIZE.min(data.len())];
    for step in 0..steps {
        for slot in indices.iter_mut() {
            *slot = rng.gen_range(0..data.len());
        }
        let loss = batch_loss_and_gradient(spec, values, data, &indices, &mut grad)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: loss {loss} at step {step}"
            )));
        }
        for (v, &g) in values.iter_mut().zip(&grad) {
            *v = (*v as f64 - learning_rate * g) as f32;
        }
    }
    Ok(())
}

fn pooled_training_data(tasks: &[SyntheticTaskSpec]) -> Result<Dataset> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one task".into()))?;
    let mut pooled = first.generate(Split::Train);
    for task in &tasks[1..] {
        if task.input_dim != first.input_dim || task.class_count != first.class_count {
            return Err(Error::Mismatch(format!(
                "task {} shape ({}, {}) differs from task {} ({}, {})",
                task.task_id,
                task.input_dim,
                task.class_count,
                first.task_id,
                first.input_dim,
                first.class_count
            )));
        }
        pooled.append(&task.generate(Split::Train));
    }
    Ok(pooled)
}

/// Trains a fresh model on the pooled training splits of all tasks.
///
/// The pooled problem is deliberately unsolvable (tasks reuse the same label
/// set over different clusters), so the result is a generic feature extractor
/// that every fine-tune then pulls its own way.
pub fn pretrain(
    spec: &TinyModelSpec,
    tasks: &[SyntheticTaskSpec],
    steps: usize,
    seed: u64,
) -> Result<Checkpoint> {
    let pooled = pooled_training_data(tasks)?;
    let base = spec.init(seed)?;
    let mut values = base.into_values();
    sgd(
        spec,
        &mut values,
        &pooled,
        steps,
        DEFAULT_LEARNING_RATE,
        seed ^ 0x5EED,
    )?;
    Checkpoint::new(spec.layout()?, values)
}

/// Continues training from `pre` on one task's training split.
///
/// `steps = 0` returns the base model unchanged. The architecture is read
/// back from the checkpoint layout.
pub fn finetune(
    pre: &Checkpoint,
    task: &SyntheticTaskSpec,
    steps: usize,
    seed: u64,
) -> Result<Checkpoint> {
    let spec = TinyModelSpec::from_layout(pre.layout())?;
    let mut values = pre.values().to_vec();
    if steps > 0 {
        let data = task.generate(Split::Train);
        sgd(
            &spec,
            &mut values,
            &data,
            steps,
            DEFAULT_LEARNING_RATE,
            seed,
        )?;
    }
    Checkpoint::new(pre.layout().clone(), values)
}
