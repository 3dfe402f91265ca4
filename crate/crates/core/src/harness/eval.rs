//! Accuracy-based fitness evaluators over the synthetic tasks.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::harness::data::{Dataset, Split, SyntheticTaskSpec};
use crate::harness::model::{predict, TinyModelSpec};
use crate::prune::FitnessEvaluator;

/// Fraction of correct predictions of `params` on one dataset.
pub fn dataset_accuracy(spec: &TinyModelSpec, params: &[f32], data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation dataset".into()));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        if predict(spec, params, data.input(i))? == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Scores checkpoints by mean classification accuracy over one split of one
/// or more tasks. Datasets are materialized once at construction; evaluation
/// takes `&self` and allocates only per-call scratch, so concurrent candidate
/// evaluations are safe and deterministic.
#[derive(Debug, Clone)]
pub struct AccuracyEvaluator {
    spec: TinyModelSpec,
    datasets: Vec<Dataset>,
}

impl AccuracyEvaluator {
    pub fn new(spec: TinyModelSpec, tasks: &[SyntheticTaskSpec], split: Split) -> Result<Self> {
        Self::with_volume(spec, tasks, split, 1.0)
    }

    /// Like [`AccuracyEvaluator::new`] but keeping only the leading
    /// `fraction` of each task's split, for calibration-volume ablations.
    pub fn with_volume(
        spec: TinyModelSpec,
        tasks: &[SyntheticTaskSpec],
        split: Split,
        fraction: f64,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidArgument(
                "evaluator needs at least one task".into(),
            ));
        }
        let mut datasets = Vec::with_capacity(tasks.len());
        for task in tasks {
            if task.input_dim != spec.input_dim() || task.class_count != spec.class_count() {
                return Err(Error::Mismatch(format!(
                    "task {} is ({}, {}) but the model wants ({}, {})",
                    task.task_id,
                    task.input_dim,
                    task.class_count,
                    spec.input_dim(),
                    spec.class_count()
                )));
            }
            datasets.push(task.generate(split).head_fraction(fraction)?);
        }
        Ok(Self { spec, datasets })
    }

    pub fn spec(&self) -> &TinyModelSpec {
        &self.spec
    }

    pub fn task_count(&self) -> usize {
        self.datasets.len()
    }

    /// Accuracy per task, in construction order.
    pub fn per_task_accuracy(&self, ckpt: &Checkpoint) -> Result<Vec<f64>> {
        self.datasets
            .iter()
            .map(|d| dataset_accuracy(&self.spec, ckpt.values(), d))
            .collect()
    }

    /// Unweighted mean accuracy over all tasks.
    pub fn accuracy(&self, ckpt: &Checkpoint) -> Result<f64> {
        let per_task = self.per_task_accuracy(ckpt)?;
        Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
    }
}

impl FitnessEvaluator for AccuracyEvaluator {
    fn evaluate(&self, candidate: &Checkpoint) -> Result<f64> {
        self.accuracy(candidate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::make_tasks;

    fn spec() -> TinyModelSpec {
        TinyModelSpec::default_for(64, 4).unwrap()
    }

    #[test]
    fn random_networks_sit_at_chance_level() {
        let tasks = make_tasks(1, 41).unwrap();
        let eval = AccuracyEvaluator::new(spec(), &tasks, Split::Calibration).unwrap();
        let mut total = 0.0;
        let seeds = 12;
        for seed in 0..seeds {
            let ckpt = spec().init(seed).unwrap();
            total += eval.accuracy(&ckpt).unwrap();
        }
        let mean = total / seeds as f64;
        assert!(
            (mean - 0.25).abs() < 0.05,
            "chance-level accuracy came out at {mean}"
        );
    }

    #[test]
    fn multi_task_accuracy_is_the_mean_of_single_task_evaluators() {
        let tasks = make_tasks(3, 42).unwrap();
        let joint = AccuracyEvaluator::new(spec(), &tasks, Split::Calibration).unwrap();
        let ckpt = spec().init(7).unwrap();
        let mut singles = 0.0;
        for task in &tasks {
            let single =
                AccuracyEvaluator::new(spec(), std::slice::from_ref(task), Split::Calibration)
                    .unwrap();
            singles += single.accuracy(&ckpt).unwrap();
        }
        let joint_acc = joint.accuracy(&ckpt).unwrap();
        assert!((joint_acc - singles / 3.0).abs() < 1e-12);
        assert_eq!(joint.per_task_accuracy(&ckpt).unwrap().len(), 3);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let tasks = make_tasks(2, 43).unwrap();
        let eval = AccuracyEvaluator::new(spec(), &tasks, Split::Test).unwrap();
        let ckpt = spec().init(3).unwrap();
        let a = eval.accuracy(&ckpt).unwrap();
        let b = eval.accuracy(&ckpt).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn volume_restriction_shrinks_the_sample_count() {
        let tasks = make_tasks(1, 44).unwrap();
        let full = AccuracyEvaluator::new(spec(), &tasks, Split::Calibration).unwrap();
        let quarter =
            AccuracyEvaluator::with_volume(spec(), &tasks, Split::Calibration, 0.25).unwrap();
        assert_eq!(
            quarter.datasets[0].len(),
            full.datasets[0].len().div_ceil(4)
        );
    }

    #[test]
    fn mismatched_checkpoints_are_rejected() {
        let tasks = make_tasks(1, 45).unwrap();
        let eval = AccuracyEvaluator::new(spec(), &tasks, Split::Calibration).unwrap();
        let tiny_spec =
            TinyModelSpec::new(vec![64, 4], crate::harness::model::Activation::Tanh).unwrap();
        let wrong = tiny_spec.init(1).unwrap();
        assert!(matches!(eval.accuracy(&wrong), Err(Error::Mismatch(_))));
        let wrong_shape_task = {
            let mut t = make_tasks(1, 46).unwrap();
            t[0].class_count = 7;
            t
        };
        assert!(AccuracyEvaluator::new(spec(), &wrong_shape_task, Split::Test).is_err());
    }
}
