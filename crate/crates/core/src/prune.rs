//! Magnitude pruning of task vectors and the subspace-weight search on top.
//!
//! Plain pruning keeps the `ceil(r * D)` largest-magnitude task-vector
//! entries. [`nps_search`] improves on that: it partitions the task vector
//! into magnitude-ranked subspaces, then lets CMA-ES pick per-subspace
//! weights so that the pruned-and-reconstructed model maximizes a fitness
//! evaluator (typically calibration accuracy). The initial all-ones weight
//! vector reproduces plain magnitude pruning and is always evaluated first,
//! so the searched result can never score below the magnitude-pruning
//! baseline on the evaluator it was searched with.

use std::sync::Arc;
use std::sync::Mutex;
use std::time::Instant;

use crate::checkpoint::{diff, ensure_same_layout, Checkpoint, TaskVector, TensorLayout};
use crate::cmaes::{
    run, CmaesConfig, Evaluation, GenerationRecord, Mode, SearchBudget, SearchError,
};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::subspace::{
    magnitude_cmp, partition_scoped, reweight, reweight_into, PartitionScope, WeightVector,
};

/// Fraction of task-vector entries kept by pruning, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityRatio(f64);

impl SparsityRatio {
    pub fn new(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sparsity ratio {r} must be in (0, 1]"
            )));
        }
        Ok(SparsityRatio(r))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// `ceil(ratio * d)`, clamped to `1..=d`.
///
/// The product is nudged down by one part in 1e12 before taking the ceiling
/// so that decimal ratios like 0.1 * 200, which land one float ulp above the
/// exact integer, do not round up an extra element.
pub(crate) fn kept_count(ratio: f64, d: usize) -> usize {
    let x = ratio * d as f64;
    let k = (x * (1.0 - 1e-12)).ceil() as usize;
    k.clamp(1, d)
}

/// Keep mask over the `kept` largest-magnitude entries; ties at the
/// threshold magnitude are broken by ascending flat index.
pub(crate) fn magnitude_mask(values: &[f32], kept: usize) -> Mask {
    let mut mask = Mask::zeros(values.len());
    if kept >= values.len() {
        for d in 0..values.len() {
            mask.set(d);
        }
        return mask;
    }
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.select_nth_unstable_by(kept - 1, magnitude_cmp(values));
    for &d in &order[..kept] {
        mask.set(d as usize);
    }
    mask
}

/// Mask over the top `ceil(r * D)` task-vector entries by magnitude.
pub fn top_r_mask(tv: &TaskVector, ratio: SparsityRatio) -> Result<Mask> {
    if tv.is_empty() {
        return Err(Error::InvalidArgument("task vector is empty".into()));
    }
    Ok(magnitude_mask(
        tv.values(),
        kept_count(ratio.value(), tv.len()),
    ))
}

/// Sparse task vector: a keep mask plus the surviving values.
#[derive(Debug, Clone)]
pub struct PrunedTaskVector {
    layout: Arc<TensorLayout>,
    mask: Mask,
    /// Kept values in ascending flat-index order.
    values: Vec<f32>,
    /// Subspace weights the vector was reweighted with before pruning; plain
    /// magnitude pruning records the single-subspace unit weight.
    weights_used: WeightVector,
    ratio: SparsityRatio,
}

impl PrunedTaskVector {
    pub fn new(
        layout: Arc<TensorLayout>,
        mask: Mask,
        values: Vec<f32>,
        weights_used: WeightVector,
        ratio: SparsityRatio,
    ) -> Result<Self> {
        if mask.len() != layout.total_len() {
            return Err(Error::Mismatch(format!(
                "mask covers {} parameters, layout declares {}",
                mask.len(),
                layout.total_len()
            )));
        }
        if values.len() != mask.count_ones() {
            return Err(Error::Mismatch(format!(
                "{} kept values for {} mask bits",
                values.len(),
                mask.count_ones()
            )));
        }
        Ok(PrunedTaskVector {
            layout,
            mask,
            values,
            weights_used,
            ratio,
        })
    }

    pub fn layout(&self) -> &Arc<TensorLayout> {
        &self.layout
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn kept_values(&self) -> &[f32] {
        &self.values
    }

    pub fn weights_used(&self) -> &WeightVector {
        &self.weights_used
    }

    pub fn ratio(&self) -> SparsityRatio {
        self.ratio
    }

    /// `(flat index, value)` pairs in ascending index order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.mask.ones().zip(self.values.iter().copied())
    }

    /// Dense task vector with zeros at pruned positions.
    pub fn expand(&self) -> TaskVector {
        let mut values = vec![0.0f32; self.layout.total_len()];
        for (d, v) in self.entries() {
            values[d] = v;
        }
        TaskVector::new(self.layout.clone(), values).expect("mask length matches layout")
    }

    /// Base checkpoint plus the sparse vector; adds only at kept positions,
    /// so the result is bit-identical to the checkpoint [`prune`] returned.
    pub fn reconstruct(&self, pre: &Checkpoint) -> Result<Checkpoint> {
        ensure_same_layout(pre.layout(), &self.layout)?;
        let mut values = pre.values().to_vec();
        for (d, v) in self.entries() {
            values[d] += v;
        }
        Checkpoint::new(pre.layout().clone(), values)
    }
}

/// Prunes a task vector to its top `ceil(r * D)` magnitudes and returns the
/// sparse vector together with the reconstructed model.
pub fn prune(
    pre: &Checkpoint,
    tv: &TaskVector,
    ratio: SparsityRatio,
) -> Result<(PrunedTaskVector, Checkpoint)> {
    ensure_same_layout(pre.layout(), tv.layout())?;
    let mask = magnitude_mask(tv.values(), kept_count(ratio.value(), tv.len()));
    let mut kept_values = Vec::with_capacity(mask.count_ones());
    let mut model = pre.values().to_vec();
    for d in mask.ones() {
        let v = tv.values()[d];
        kept_values.push(v);
        model[d] += v;
    }
    let pruned = PrunedTaskVector::new(
        tv.layout().clone(),
        mask,
        kept_values,
        WeightVector::ones(1),
        ratio,
    )?;
    let model = Checkpoint::new(pre.layout().clone(), model)?;
    Ok((pruned, model))
}

/// Scores candidate checkpoints; higher is better.
///
/// Implementations must be deterministic and safe to call concurrently on
/// distinct candidates.
pub trait FitnessEvaluator: Sync {
    fn evaluate(&self, candidate: &Checkpoint) -> Result<f64>;
}

impl<F> FitnessEvaluator for F
where
    F: Fn(&Checkpoint) -> Result<f64> + Sync,
{
    fn evaluate(&self, candidate: &Checkpoint) -> Result<f64> {
        self(candidate)
    }
}

/// Reusable per-worker buffers for candidate construction.
struct Scratch {
    adjusted: Vec<f32>,
    model: Vec<f32>,
}

struct ScratchPool {
    slots: Mutex<Vec<Scratch>>,
    len: usize,
}

impl ScratchPool {
    fn new(len: usize) -> Self {
        ScratchPool {
            slots: Mutex::new(Vec::new()),
            len,
        }
    }

    fn acquire(&self) -> Scratch {
        self.slots.lock().unwrap().pop().unwrap_or_else(|| Scratch {
            adjusted: vec![0.0; self.len],
            model: vec![0.0; self.len],
        })
    }

    fn release(&self, scratch: Scratch) {
        self.slots.lock().unwrap().push(scratch);
    }
}

/// Settings for [`nps_search`].
#[derive(Debug, Clone)]
pub struct NpsSearchConfig {
    pub subspaces: usize,
    pub ratio: SparsityRatio,
    pub budget: SearchBudget,
    pub seed: u64,
    /// Initial CMA-ES step size around the all-ones weight vector.
    pub initial_sigma: f64,
    pub scope: PartitionScope,
}

impl NpsSearchConfig {
    pub fn new(subspaces: usize, ratio: SparsityRatio, budget: SearchBudget, seed: u64) -> Self {
        NpsSearchConfig {
            subspaces,
            ratio,
            budget,
            seed,
            initial_sigma: 0.3,
            scope: PartitionScope::Global,
        }
    }
}

/// Outcome of a subspace-weight search.
#[derive(Debug, Clone)]
pub struct NpsSearchResult {
    pub pruned: PrunedTaskVector,
    pub checkpoint: Checkpoint,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
    pub wall_seconds: f64,
}

fn search_failure(error: Error) -> SearchError {
    SearchError {
        error,
        history: Vec::new(),
    }
}

/// Searches per-subspace weights that maximize the evaluator's score of the
/// pruned-and-reconstructed model.
///
/// With a zero-generation budget the output is identical to [`prune`] at the
/// same ratio, because the all-ones initial mean is the only candidate.
pub fn nps_search<E: FitnessEvaluator>(
    pre: &Checkpoint,
    fine_tuned: &Checkpoint,
    evaluator: &E,
    config: &NpsSearchConfig,
) -> Result<NpsSearchResult, SearchError> {
    let tv = diff(fine_tuned, pre).map_err(search_failure)?;
    let part = partition_scoped(&tv, config.subspaces, config.scope).map_err(search_failure)?;
    let kept = kept_count(config.ratio.value(), tv.len());
    let layout = pre.layout().clone();
    let pool = ScratchPool::new(tv.len());

    let build_candidate = |w: &[f64], scratch: &mut Scratch| {
        let w32: Vec<f32> = w.iter().map(|&v| v as f32).collect();
        reweight_into(
            &mut scratch.adjusted,
            tv.values(),
            part.bin_assignments(),
            &w32,
        );
        let mask = magnitude_mask(&scratch.adjusted, kept);
        scratch.model.copy_from_slice(pre.values());
        for d in mask.ones() {
            scratch.model[d] += scratch.adjusted[d];
        }
        mask
    };

    let objective = |w: &[f64]| -> Result<Evaluation> {
        let built = Instant::now();
        let mut scratch = pool.acquire();
        build_candidate(w, &mut scratch);
        let candidate = Checkpoint::new(layout.clone(), std::mem::take(&mut scratch.model))?;
        let build_seconds = built.elapsed().as_secs_f64();

        let scored = Instant::now();
        let fitness = evaluator.evaluate(&candidate);
        let score_seconds = scored.elapsed().as_secs_f64();

        scratch.model = candidate.into_values();
        pool.release(scratch);
        Ok(Evaluation {
            fitness: fitness?,
            build_seconds,
            score_seconds,
        })
    };

    let cma = CmaesConfig::new(
        vec![1.0; config.subspaces],
        config.initial_sigma,
        Mode::Maximize,
        config.seed,
    );
    let outcome = run(&cma, &config.budget, objective)?;

    // Rebuild the winning candidate through the same arithmetic path the
    // objective used, then package it as a sparse vector.
    let weights = WeightVector(outcome.best_point);
    let adjusted = reweight(&tv, &part, &weights).map_err(search_failure)?;
    let mask = magnitude_mask(adjusted.values(), kept);
    let mut kept_values = Vec::with_capacity(kept);
    let mut model = pre.values().to_vec();
    for d in mask.ones() {
        let v = adjusted.values()[d];
        kept_values.push(v);
        model[d] += v;
    }
    let pruned = PrunedTaskVector::new(layout.clone(), mask, kept_values, weights, config.ratio)
        .map_err(search_failure)?;
    let checkpoint = Checkpoint::new(layout, model).map_err(search_failure)?;
    Ok(NpsSearchResult {
        pruned,
        checkpoint,
        best_fitness: outcome.best_fitness,
        history: outcome.history,
        evaluations: outcome.evaluations,
        wall_seconds: outcome.wall_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::apply;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout_of(d: usize) -> Arc<TensorLayout> {
        TensorLayout::new(vec![("w", vec![d])]).unwrap()
    }

    fn tv_from(values: Vec<f32>) -> TaskVector {
        let layout = layout_of(values.len());
        TaskVector::new(layout, values).unwrap()
    }

    fn ratio(r: f64) -> SparsityRatio {
        SparsityRatio::new(r).unwrap()
    }

    /// Reference top-k selection by full sort; mirrors the mask tie rules.
    fn sort_oracle(values: &[f32], kept: usize) -> Vec<usize> {
        let mut order: Vec<u32> = (0..values.len() as u32).collect();
        order.sort_by(magnitude_cmp(values));
        let mut top: Vec<usize> = order[..kept].iter().map(|&i| i as usize).collect();
        top.sort_unstable();
        top
    }

    #[test]
    fn ratio_validation() {
        assert!(SparsityRatio::new(0.0).is_err());
        assert!(SparsityRatio::new(-0.1).is_err());
        assert!(SparsityRatio::new(1.0001).is_err());
        assert!(SparsityRatio::new(f64::NAN).is_err());
        assert!(SparsityRatio::new(1.0).is_ok());
        assert!(SparsityRatio::new(1e-9).is_ok());
    }

    #[test]
    fn kept_count_handles_decimal_ratios_exactly() {
        assert_eq!(kept_count(0.1, 200), 20);
        assert_eq!(kept_count(0.05, 200), 10);
        assert_eq!(kept_count(0.1, 10), 1);
        assert_eq!(kept_count(0.05, 1_000_000), 50_000);
        assert_eq!(kept_count(0.07, 100), 7);
        assert_eq!(kept_count(1.0, 7), 7);
        assert_eq!(kept_count(0.29, 7), 3);
        assert_eq!(kept_count(1.0 / 3.0, 10), 4);
        assert_eq!(kept_count(1e-9, 50), 1);
        assert_eq!(kept_count(0.04, 10_000), 400);
    }

    #[test]
    fn mask_matches_sort_oracle_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let d = rng.gen_range(1..=512);
            // Coarse quantization forces plenty of magnitude ties.
            let values: Vec<f32> = (0..d)
                .map(|_| (rng.gen_range(-6i32..=6) as f32) * 0.5)
                .collect();
            for r in [0.04, 0.05, 0.1, 0.2, 0.5, 1.0] {
                let kept = kept_count(r, d);
                let mask = magnitude_mask(&values, kept);
                assert_eq!(mask.count_ones(), kept);
                assert_eq!(mask.ones().collect::<Vec<_>>(), sort_oracle(&values, kept));
            }
        }
    }

    #[test]
    fn threshold_ties_break_by_ascending_index() {
        let tv = tv_from(vec![5.0, 5.0, 5.0, 5.0]);
        let mask = top_r_mask(&tv, ratio(0.5)).unwrap();
        assert_eq!(mask.ones().collect::<Vec<_>>(), vec![0, 1]);

        let tv = tv_from(vec![1.0, -5.0, 5.0, 5.0, 0.0]);
        let mask = top_r_mask(&tv, ratio(0.4)).unwrap();
        assert_eq!(mask.ones().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn full_ratio_keeps_everything() {
        let tv = tv_from(vec![0.0, -1.0, 2.0]);
        let mask = top_r_mask(&tv, ratio(1.0)).unwrap();
        assert_eq!(mask.count_ones(), 3);
    }

    #[test]
    fn prune_reconstruction_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 400;
        let layout = layout_of(d);
        let pre_values: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tv_values: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pre = Checkpoint::new(layout.clone(), pre_values).unwrap();
        let tv = TaskVector::new(layout, tv_values).unwrap();

        let (pruned, model) = prune(&pre, &tv, ratio(0.1)).unwrap();
        assert_eq!(pruned.kept_values().len(), 40);
        assert_eq!(pruned.mask().count_ones(), 40);
        assert_eq!(pruned.weights_used().as_slice(), &[1.0]);

        let rebuilt = pruned.reconstruct(&pre).unwrap();
        for (a, b) in rebuilt.values().iter().zip(model.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        // Off-mask positions keep the base value bit for bit.
        for d in 0..tv.len() {
            if !pruned.mask().get(d) {
                assert_eq!(model.values()[d].to_bits(), pre.values()[d].to_bits());
            }
        }

        // Kept values are stored in ascending flat-index order.
        let indices: Vec<usize> = pruned.entries().map(|(d, _)| d).collect();
        assert!(indices.windows(2).all(|w| w[0] < w[1]));
        let expanded = pruned.expand();
        assert_eq!(expanded.len(), d);
        for (d, v) in pruned.entries() {
            assert_eq!(expanded.values()[d], v);
        }
    }

    #[test]
    fn prune_at_full_ratio_recovers_fine_tuned_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layout = layout_of(300);
        let pre_values: Vec<f32> = (0..300).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ft_values: Vec<f32> = (0..300).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pre = Checkpoint::new(layout.clone(), pre_values).unwrap();
        let ft = Checkpoint::new(layout, ft_values).unwrap();
        let tv = diff(&ft, &pre).unwrap();

        let (_, model) = prune(&pre, &tv, ratio(1.0)).unwrap();
        let direct = apply(&pre, &tv, 1.0).unwrap();
        for (a, b) in model.values().iter().zip(direct.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in model.values().iter().zip(ft.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    fn fit_toward(target: Checkpoint) -> impl Fn(&Checkpoint) -> crate::error::Result<f64> + Sync {
        move |candidate: &Checkpoint| {
            let d: f64 = candidate
                .values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| {
                    let e = (*a - *b) as f64;
                    e * e
                })
                .sum();
            Ok(-d)
        }
    }

    fn search_fixture(d: usize, seed: u64) -> (Checkpoint, Checkpoint) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = layout_of(d);
        let pre: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ft: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (
            Checkpoint::new(layout.clone(), pre).unwrap(),
            Checkpoint::new(layout, ft).unwrap(),
        )
    }

    #[test]
    fn zero_generation_search_equals_plain_pruning() {
        let (pre, ft) = search_fixture(240, 31);
        let tv = diff(&ft, &pre).unwrap();
        let (plain, plain_model) = prune(&pre, &tv, ratio(0.1)).unwrap();

        let cfg = NpsSearchConfig::new(6, ratio(0.1), SearchBudget::new(0), 9);
        let evaluator = fit_toward(ft.clone());
        let result = nps_search(&pre, &ft, &evaluator, &cfg).unwrap();

        assert_eq!(result.pruned.mask(), plain.mask());
        assert_eq!(result.pruned.kept_values(), plain.kept_values());
        for (a, b) in result.checkpoint.values().iter().zip(plain_model.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(result.evaluations, 1);
        assert_eq!(result.pruned.weights_used().as_slice(), &[1.0; 6]);
    }

    #[test]
    fn search_never_scores_below_plain_pruning() {
        // Target a model whose ideal subspace weights are not all ones, so
        // the search has genuine room to beat the magnitude-pruning start.
        let (pre, ft) = search_fixture(300, 77);
        let tv = diff(&ft, &pre).unwrap();
        let part = crate::subspace::partition(&tv, 5).unwrap();
        let ideal = WeightVector(vec![1.4, 0.6, 1.0, 1.2, 0.8]);
        let target = crate::subspace::adjusted_model(&pre, &tv, &part, &ideal).unwrap();
        let evaluator = fit_toward(target);

        let cfg = NpsSearchConfig::new(5, ratio(0.5), SearchBudget::new(25), 3);
        let result = nps_search(&pre, &ft, &evaluator, &cfg).unwrap();

        let baseline = result.history[0].best_fitness;
        assert!(result.best_fitness >= baseline);
        // The rebuilt checkpoint scores exactly the reported best fitness.
        let rescored = evaluator(&result.checkpoint).unwrap();
        assert_eq!(rescored.to_bits(), result.best_fitness.to_bits());
        // This fixture has room to improve, and 25 generations find some.
        assert!(result.best_fitness > baseline);
        assert_eq!(result.pruned.weights_used().len(), 5);
    }

    #[test]
    fn search_is_deterministic_per_seed() {
        let (pre, ft) = search_fixture(200, 15);
        let evaluator = fit_toward(ft.clone());
        let cfg = NpsSearchConfig::new(4, ratio(0.05), SearchBudget::new(12), 42);
        let a = nps_search(&pre, &ft, &evaluator, &cfg).unwrap();
        let b = nps_search(&pre, &ft, &evaluator, &cfg).unwrap();
        assert_eq!(a.pruned.mask(), b.pruned.mask());
        assert_eq!(a.pruned.kept_values(), b.pruned.kept_values());
        assert_eq!(a.best_fitness.to_bits(), b.best_fitness.to_bits());
        assert_eq!(
            a.pruned.weights_used().as_slice(),
            b.pruned.weights_used().as_slice()
        );
    }

    #[test]
    fn evaluator_failure_aborts_with_history() {
        let (pre, ft) = search_fixture(100, 2);
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let evaluator = move |_: &Checkpoint| {
            if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) > 10 {
                Err(Error::Numeric("evaluator blew up".into()))
            } else {
                Ok(0.0)
            }
        };
        let cfg = NpsSearchConfig::new(3, ratio(0.2), SearchBudget::new(50), 1);
        let err = nps_search(&pre, &ft, &evaluator, &cfg).unwrap_err();
        assert!(matches!(err.error, Error::Numeric(_)));
        assert!(!err.history.is_empty());
    }

    #[test]
    fn search_rejects_invalid_subspace_count() {
        let (pre, ft) = search_fixture(50, 4);
        let evaluator = fit_toward(ft.clone());
        let cfg = NpsSearchConfig::new(0, ratio(0.2), SearchBudget::new(1), 1);
        assert!(nps_search(&pre, &ft, &evaluator, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn mask_cardinality_matches_ceiling(
            values in prop::collection::vec(-100.0f32..100.0, 1..400),
            r in 0.01f64..1.0,
        ) {
            let tv = tv_from(values);
            let mask = top_r_mask(&tv, SparsityRatio::new(r).unwrap()).unwrap();
            prop_assert_eq!(mask.count_ones(), kept_count(r, tv.len()));
        }

        #[test]
        fn masking_is_idempotent_for_nonzero_kept_values(
            raw in prop::collection::vec((0.5f32..50.0, prop::bool::ANY), 4..200),
            r in 0.05f64..1.0,
        ) {
            let values: Vec<f32> = raw
                .iter()
                .map(|&(m, neg)| if neg { -m } else { m })
                .collect();
            let tv = tv_from(values);
            let sr = SparsityRatio::new(r).unwrap();
            let mask = top_r_mask(&tv, sr).unwrap();
            let masked: Vec<f32> = tv
                .values()
                .iter()
                .enumerate()
                .map(|(d, &v)| if mask.get(d) { v } else { 0.0 })
                .collect();
            let again = top_r_mask(&tv_from(masked), sr).unwrap();
            prop_assert_eq!(again, mask);
        }

        #[test]
        fn pruned_values_match_mask_positions(
            values in prop::collection::vec(-10.0f32..10.0, 2..300),
            r in 0.01f64..1.0,
        ) {
            let d = values.len();
            let layout = layout_of(d);
            let pre = Checkpoint::new(layout.clone(), vec![0.25; d]).unwrap();
            let tv = TaskVector::new(layout, values).unwrap();
            let sr = SparsityRatio::new(r).unwrap();
            let (pruned, model) = prune(&pre, &tv, sr).unwrap();
            prop_assert_eq!(pruned.kept_values().len(), kept_count(r, d));
            for (d, v) in pruned.entries() {
                prop_assert_eq!(v, tv.values()[d]);
                prop_assert_eq!(model.values()[d], 0.25f32 + v);
            }
        }
    }
}
