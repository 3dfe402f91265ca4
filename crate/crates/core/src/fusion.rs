//! Multi-model fusion: folding several pruned task vectors into one
//! multi-task checkpoint.
//!
//! The merge is a coefficient-weighted sum of surviving deltas, normalized by
//! the coefficient total so that uniformly scaling every coefficient leaves
//! the result unchanged:
//!
//! ```text
//! merged[d] = pre[d] + (sum_i lambda_i * delta_i[d]) / (sum_i lambda_i)
//! ```
//!
//! [`fuse_search`] tunes the coefficients with the covariance-adapting
//! optimizer, scoring each candidate merge on calibration data. Candidates
//! are clamped into the [`FUSION_LAMBDA_MIN`]..[`FUSION_LAMBDA_MAX`] range at
//! evaluation time, which keeps the optimizer itself unconstrained.

use std::time::Instant;

use crate::checkpoint::{ensure_same_layout, Checkpoint};
use crate::cmaes::{
    run, CmaesConfig, Evaluation, GenerationRecord, Mode, SearchBudget, SearchError,
};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::prune::{FitnessEvaluator, PrunedTaskVector};

/// Lower edge of the fusion coefficient search range.
pub const FUSION_LAMBDA_MIN: f64 = 0.8;
/// Upper edge of the fusion coefficient search range.
pub const FUSION_LAMBDA_MAX: f64 = 2.5;

const FUSION_INITIAL_SIGMA: f64 = 0.3;

fn check_fusion_inputs(
    pre: &Checkpoint,
    pruned: &[PrunedTaskVector],
    lambdas: &[f64],
) -> Result<()> {
    if pruned.is_empty() {
        return Err(Error::InvalidArgument(
            "fusion needs at least one pruned task vector".into(),
        ));
    }
    if pruned.len() != lambdas.len() {
        return Err(Error::InvalidArgument(format!(
            "got {} pruned task vectors but {} coefficients",
            pruned.len(),
            lambdas.len()
        )));
    }
    if let Some(bad) = lambdas.iter().find(|l| !l.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fusion coefficient {bad} is not finite"
        )));
    }
    for p in pruned {
        ensure_same_layout(pre.layout(), p.layout())?;
    }
    Ok(())
}

/// Shared merge core. Coordinates never touched by any mask keep the base
/// model's bits; touched coordinates get one f32 add of the f64-accumulated
/// combined delta, matching the arithmetic of single-task reconstruction.
fn fuse_with_coefficients(
    pre: &Checkpoint,
    pruned: &[PrunedTaskVector],
    coefficients: &[f64],
) -> Result<Checkpoint> {
    let len = pre.len();
    let mut combined = vec![0.0f64; len];
    let mut touched = Mask::zeros(len);
    for (p, &c) in pruned.iter().zip(coefficients) {
        for (index, delta) in p.entries() {
            combined[index] += c * delta as f64;
            touched.set(index);
        }
    }
    let mut values = pre.values().to_vec();
    for index in touched.ones() {
        values[index] += combined[index] as f32;
    }
    Checkpoint::new(pre.layout().clone(), values)
}

/// Merges pruned task vectors with sum-normalized coefficients.
///
/// Each coefficient becomes `lambda_i / sum(lambda)`, computed in f64 before
/// any delta arithmetic, so a single task merges with coefficient exactly 1
/// and equal coefficients reduce exactly to a plain average of deltas.
pub fn fuse(pre: &Checkpoint, pruned: &[PrunedTaskVector], lambdas: &[f64]) -> Result<Checkpoint> {
    check_fusion_inputs(pre, pruned, lambdas)?;
    let total: f64 = lambdas.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "fusion coefficients sum to {total}; normalization is degenerate"
        )));
    }
    let coefficients: Vec<f64> = lambdas.iter().map(|l| l / total).collect();
    fuse_with_coefficients(pre, pruned, &coefficients)
}

/// Merges pruned task vectors without normalizing by the coefficient sum:
/// `merged = pre + sum_i lambda_i * delta_i`.
pub fn fuse_unnormalized(
    pre: &Checkpoint,
    pruned: &[PrunedTaskVector],
    lambdas: &[f64],
) -> Result<Checkpoint> {
    check_fusion_inputs(pre, pruned, lambdas)?;
    fuse_with_coefficients(pre, pruned, lambdas)
}

/// A searched fusion: the best merged model plus the coefficients that built
/// it and the per-task masks that were merged.
#[derive(Debug, Clone)]
pub struct FusionResult {
    pub merged: Checkpoint,
    pub lambdas: Vec<f64>,
    pub per_task_masks: Vec<Mask>,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
    pub wall_seconds: f64,
}

fn clamp_lambdas(candidate: &[f64]) -> Vec<f64> {
    candidate
        .iter()
        .map(|l| l.clamp(FUSION_LAMBDA_MIN, FUSION_LAMBDA_MAX))
        .collect()
}

/// Searches per-task fusion coefficients that maximize the evaluator's score
/// of the merged model.
///
/// The initial mean is all ones, evaluated before any sampled generation, so
/// the returned merge never scores below the uniform-coefficient baseline.
/// With a zero-generation budget the output equals `fuse` with ones.
pub fn fuse_search<E: FitnessEvaluator>(
    pre: &Checkpoint,
    pruned: &[PrunedTaskVector],
    evaluator: &E,
    budget: &SearchBudget,
    seed: u64,
) -> Result<FusionResult, SearchError> {
    let plain = |error: Error| SearchError {
        error,
        history: Vec::new(),
    };
    check_fusion_inputs(pre, pruned, &vec![1.0; pruned.len()]).map_err(plain)?;

    let objective = |candidate: &[f64]| -> Result<Evaluation> {
        let built = Instant::now();
        let lambdas = clamp_lambdas(candidate);
        let merged = fuse(pre, pruned, &lambdas)?;
        let build_seconds = built.elapsed().as_secs_f64();

        let scored = Instant::now();
        let fitness = evaluator.evaluate(&merged)?;
        Ok(Evaluation {
            fitness,
            build_seconds,
            score_seconds: scored.elapsed().as_secs_f64(),
        })
    };

    let config = CmaesConfig::new(
        vec![1.0; pruned.len()],
        FUSION_INITIAL_SIGMA,
        Mode::Maximize,
        seed,
    );
    let outcome = run(&config, budget, objective)?;

    let lambdas = clamp_lambdas(&outcome.best_point);
    let merged = fuse(pre, pruned, &lambdas).map_err(plain)?;
    Ok(FusionResult {
        merged,
        lambdas,
        per_task_masks: pruned.iter().map(|p| p.mask().clone()).collect(),
        best_fitness: outcome.best_fitness,
        history: outcome.history,
        evaluations: outcome.evaluations,
        wall_seconds: outcome.wall_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{TaskVector, TensorLayout};
    use crate::prune::{prune, SparsityRatio};
    use crate::transfer::{transfer, TransferConfig};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn layout(len: usize) -> Arc<TensorLayout> {
        TensorLayout::new(vec![("w", vec![len])]).unwrap()
    }

    fn pruned_from_dense(pre: &Checkpoint, deltas: Vec<f32>, r: f64) -> PrunedTaskVector {
        let tv = TaskVector::new(pre.layout().clone(), deltas).unwrap();
        let ratio = SparsityRatio::new(r).unwrap();
        prune(pre, &tv, ratio).unwrap().0
    }

    fn random_setup(len: usize, tasks: usize, seed: u64) -> (Checkpoint, Vec<PrunedTaskVector>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let lay = layout(len);
        let pre_vals: Vec<f32> = (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let pre = Checkpoint::new(lay, pre_vals).unwrap();
        let pruned = (0..tasks)
            .map(|_| {
                let deltas: Vec<f32> = (0..len).map(|_| rng.gen_range(-0.3f32..0.3)).collect();
                pruned_from_dense(&pre, deltas, 0.5)
            })
            .collect();
        (pre, pruned)
    }

    #[test]
    fn single_task_any_positive_lambda_matches_pruned_model() {
        let (pre, pruned) = random_setup(300, 1, 1);
        let reconstructed = pruned[0].reconstruct(&pre).unwrap();
        for lambda in [1.0, 0.3, 2.5, 1773.25] {
            let merged = fuse(&pre, &pruned, &[lambda]).unwrap();
            for (a, b) in merged.values().iter().zip(reconstructed.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn single_task_fusion_matches_unit_transfer() {
        let (pre, pruned) = random_setup(200, 1, 2);
        let merged = fuse(&pre, &pruned, &[1.0]).unwrap();
        let cfg = TransferConfig::new(1.0, pruned[0].ratio()).unwrap();
        let transferred = transfer(&pre, &pruned[0], &cfg).unwrap();
        for (a, b) in merged.values().iter().zip(transferred.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn duplicated_task_with_equal_lambdas_matches_single_model() {
        let (pre, mut pruned) = random_setup(300, 1, 3);
        pruned.push(pruned[0].clone());
        let single = pruned[0].reconstruct(&pre).unwrap();
        let merged = fuse(&pre, &pruned, &[1.0, 1.0]).unwrap();
        for (a, b) in merged.values().iter().zip(single.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn hand_example_normalizes_by_coefficient_sum() {
        let lay = layout(2);
        let pre = Checkpoint::new(lay.clone(), vec![0.0, 0.0]).unwrap();
        // Task one keeps only coordinate 0, task two only coordinate 1.
        let a = pruned_from_dense(&pre, vec![1.0, 0.0], 0.5);
        let b = pruned_from_dense(&pre, vec![0.0, 3.0], 0.5);
        assert!(a.mask().get(0) && !a.mask().get(1));
        assert!(!b.mask().get(0) && b.mask().get(1));
        let merged = fuse(&pre, &[a, b], &[1.0, 2.0]).unwrap();
        assert!((merged.values()[0] - 1.0 / 3.0).abs() < 1e-7);
        assert_eq!(merged.values()[1], 2.0);
    }

    #[test]
    fn uniform_scaling_of_lambdas_changes_nothing() {
        let (pre, pruned) = random_setup(400, 3, 4);
        let base = fuse(&pre, &pruned, &[1.0, 1.0, 1.0]).unwrap();
        let scaled = fuse(&pre, &pruned, &[7.3, 7.3, 7.3]).unwrap();
        for (a, b) in base.values().iter().zip(scaled.values()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn untouched_coordinates_keep_base_bits() {
        let lay = layout(4);
        let pre = Checkpoint::new(lay.clone(), vec![-0.0, 1.0, -0.0, 2.0]).unwrap();
        let p = pruned_from_dense(&pre, vec![0.0, 0.5, 0.0, -0.5], 0.5);
        let merged = fuse(&pre, &[p], &[1.0]).unwrap();
        assert_eq!(merged.values()[0].to_bits(), (-0.0f32).to_bits());
        assert_eq!(merged.values()[2].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn unnormalized_fusion_is_a_plain_weighted_sum() {
        let lay = layout(2);
        let pre = Checkpoint::new(lay.clone(), vec![0.0, 0.0]).unwrap();
        let a = pruned_from_dense(&pre, vec![1.0, 0.0], 0.5);
        let b = pruned_from_dense(&pre, vec![0.0, 3.0], 0.5);
        let merged = fuse_unnormalized(&pre, &[a, b], &[1.0, 2.0]).unwrap();
        assert_eq!(merged.values(), &[1.0, 6.0]);
    }

    #[test]
    fn degenerate_and_malformed_inputs_are_rejected() {
        let (pre, pruned) = random_setup(100, 2, 5);
        assert!(matches!(
            fuse(&pre, &pruned, &[1.0, -1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            fuse(&pre, &[], &[]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            fuse(&pre, &pruned, &[1.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            fuse(&pre, &pruned, &[1.0, f64::INFINITY]),
            Err(Error::InvalidArgument(_))
        ));
        let other = Checkpoint::new(layout(101), vec![0.0; 101]).unwrap();
        assert!(matches!(
            fuse(&other, &pruned, &[1.0, 1.0]),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn zero_generation_search_equals_uniform_fusion() {
        let (pre, pruned) = random_setup(300, 3, 6);
        let target = fuse(&pre, &pruned, &[1.0, 1.0, 1.0]).unwrap();
        let evaluator = |c: &Checkpoint| {
            let d: f64 = c
                .values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) as f64)
                .map(|d| d * d)
                .sum();
            Ok(-d)
        };
        let budget = SearchBudget::new(0);
        let result = fuse_search(&pre, &pruned, &evaluator, &budget, 9).unwrap();
        assert_eq!(result.lambdas, vec![1.0, 1.0, 1.0]);
        assert_eq!(result.evaluations, 1);
        for (a, b) in result.merged.values().iter().zip(target.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(result.per_task_masks.len(), 3);
    }

    #[test]
    fn search_recovers_uneven_coefficients() {
        let (pre, pruned) = random_setup(400, 2, 7);
        let target = fuse(&pre, &pruned, &[2.0, 0.8]).unwrap();
        let evaluator = |c: &Checkpoint| {
            let d: f64 = c
                .values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) as f64)
                .map(|d| d * d)
                .sum();
            Ok(-d)
        };
        let budget = SearchBudget::new(60).without_early_stop();
        let result = fuse_search(&pre, &pruned, &evaluator, &budget, 13).unwrap();

        let ones_fitness = evaluator
            .evaluate(&fuse(&pre, &pruned, &[1.0, 1.0]).unwrap())
            .unwrap();
        assert!(result.best_fitness >= ones_fitness);
        assert!(
            result.lambdas[0] > result.lambdas[1],
            "expected the heavier target coefficient to be found, got {:?}",
            result.lambdas
        );
        // The rebuilt merge scores exactly the reported best fitness.
        let rescored = evaluator.evaluate(&result.merged).unwrap();
        assert_eq!(rescored.to_bits(), result.best_fitness.to_bits());
    }

    #[test]
    fn search_lambdas_stay_inside_the_clamp_range() {
        let (pre, pruned) = random_setup(200, 2, 8);
        // Target built far outside the range; the best reachable point sits on
        // the clamp boundary.
        let target = fuse_with_coefficients(&pre, &pruned, &[5.0, 5.0]).unwrap();
        let evaluator = |c: &Checkpoint| {
            let d: f64 = c
                .values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) as f64)
                .map(|d| d * d)
                .sum();
            Ok(-d)
        };
        let budget = SearchBudget::new(80).without_early_stop();
        let result = fuse_search(&pre, &pruned, &evaluator, &budget, 21).unwrap();
        for l in &result.lambdas {
            assert!((FUSION_LAMBDA_MIN..=FUSION_LAMBDA_MAX).contains(l));
        }
    }

    #[test]
    fn same_seed_reproduces_the_search_bit_for_bit() {
        let (pre, pruned) = random_setup(250, 2, 10);
        let target = fuse(&pre, &pruned, &[1.3, 0.9]).unwrap();
        let evaluator = |c: &Checkpoint| {
            let d: f64 = c
                .values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) as f64)
                .map(|d| d * d)
                .sum();
            Ok(-d)
        };
        let budget = SearchBudget::new(20).without_early_stop();
        let a = fuse_search(&pre, &pruned, &evaluator, &budget, 33).unwrap();
        let b = fuse_search(&pre, &pruned, &evaluator, &budget, 33).unwrap();
        assert_eq!(a.lambdas, b.lambdas);
        for (x, y) in a.merged.values().iter().zip(b.merged.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn evaluator_failure_carries_partial_history() {
        let (pre, pruned) = random_setup(100, 2, 11);
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let evaluator = |_: &Checkpoint| {
            let n = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if n >= 8 {
                Err(Error::Numeric("synthetic evaluator failure".into()))
            } else {
                Ok(0.5)
            }
        };
        let budget = SearchBudget::new(50).without_early_stop();
        let err = fuse_search(&pre, &pruned, &evaluator, &budget, 5).unwrap_err();
        assert!(matches!(err.error, Error::Numeric(_)));
        assert!(!err.history.is_empty());
    }

    #[test]
    fn identical_tasks_merge_to_the_single_task_model() {
        let (pre, pruned) = random_setup(300, 1, 12);
        let tripled = vec![pruned[0].clone(), pruned[0].clone(), pruned[0].clone()];
        let single = pruned[0].reconstruct(&pre).unwrap();
        let merged = fuse(&pre, &tripled, &[1.7, 0.9, 2.2]).unwrap();
        for (a, b) in merged.values().iter().zip(single.values()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }
}
