//! Reference merging and sparsification methods for comparison tables:
//! weight averaging, task arithmetic, trim/elect-sign/disjoint-merge, and
//! random drop-with-rescale.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{ensure_same_layout, Checkpoint, TaskVector};
use crate::error::{Error, Result};
use crate::prune::{kept_count, magnitude_mask, SparsityRatio};

/// Element-wise arithmetic mean of the checkpoints, accumulated in f64.
pub fn weight_average(checkpoints: &[Checkpoint]) -> Result<Checkpoint> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average zero checkpoints".into()))?;
    for other in &checkpoints[1..] {
        ensure_same_layout(first.layout(), other.layout())?;
    }
    let n = checkpoints.len() as f64;
    let mut sums = vec![0.0f64; first.len()];
    for ckpt in checkpoints {
        for (s, &v) in sums.iter_mut().zip(ckpt.values()) {
            *s += v as f64;
        }
    }
    let values: Vec<f32> = sums.iter().map(|s| (s / n) as f32).collect();
    Checkpoint::new(first.layout().clone(), values)
}

/// Adds the lambda-scaled sum of task vectors to the base model:
/// `pre + lambda * sum(tv)`. No normalization by the number of tasks.
///
/// The sum and scale run in f64; each coordinate then lands on the base with
/// a single f32 add, the same arithmetic a lone task vector application uses.
pub fn task_arithmetic(
    pre: &Checkpoint,
    task_vectors: &[TaskVector],
    lambda: f64,
) -> Result<Checkpoint> {
    if !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "task arithmetic coefficient {lambda} is not finite"
        )));
    }
    for tv in task_vectors {
        ensure_same_layout(pre.layout(), tv.layout())?;
    }
    if lambda == 0.0 || task_vectors.is_empty() {
        // Adding exactly nothing: keep the base bits (a literal +0.0 would
        // flip negative zeros).
        return Checkpoint::new(pre.layout().clone(), pre.values().to_vec());
    }
    let mut sums = vec![0.0f64; pre.len()];
    for tv in task_vectors {
        for (s, &v) in sums.iter_mut().zip(tv.values()) {
            *s += v as f64;
        }
    }
    let values: Vec<f32> = pre
        .values()
        .iter()
        .zip(&sums)
        .map(|(&p, &s)| p + (lambda * s) as f32)
        .collect();
    Checkpoint::new(pre.layout().clone(), values)
}

/// Trim / elect sign / disjoint merge, then `pre + lambda * merged`.
///
/// Per task, only the top `ceil(r*D)` elements by magnitude survive. Per
/// coordinate, the sign holding the larger total magnitude mass wins (ties go
/// positive), and the merged value is the mean of the surviving values that
/// carry the winning sign, or zero when none do.
pub fn ties_merge(
    pre: &Checkpoint,
    task_vectors: &[TaskVector],
    ratio: SparsityRatio,
    lambda: f64,
) -> Result<Checkpoint> {
    if task_vectors.is_empty() {
        return Err(Error::InvalidArgument(
            "sign-election merge needs at least one task vector".into(),
        ));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "merge coefficient {lambda} is not finite"
        )));
    }
    for tv in task_vectors {
        ensure_same_layout(pre.layout(), tv.layout())?;
    }
    let d = pre.len();
    let kept = kept_count(ratio.value(), d);

    let mut positive_mass = vec![0.0f64; d];
    let mut negative_mass = vec![0.0f64; d];
    let mut positive_sum = vec![0.0f64; d];
    let mut negative_sum = vec![0.0f64; d];
    let mut positive_count = vec![0u32; d];
    let mut negative_count = vec![0u32; d];
    for tv in task_vectors {
        let mask = magnitude_mask(tv.values(), kept);
        for index in mask.ones() {
            let v = tv.values()[index] as f64;
            if v > 0.0 {
                positive_mass[index] += v;
                positive_sum[index] += v;
                positive_count[index] += 1;
            } else if v < 0.0 {
                negative_mass[index] += -v;
                negative_sum[index] += v;
                negative_count[index] += 1;
            }
        }
    }

    let values: Vec<f32> = (0..d)
        .map(|i| {
            let (sum, count) = if positive_mass[i] >= negative_mass[i] {
                (positive_sum[i], positive_count[i])
            } else {
                (negative_sum[i], negative_count[i])
            };
            let merged = if count == 0 { 0.0 } else { sum / count as f64 };
            let p = pre.values()[i];
            if merged == 0.0 {
                p
            } else {
                p + (lambda * merged) as f32
            }
        })
        .collect();
    Checkpoint::new(pre.layout().clone(), values)
}

/// Random sparsification settings: drop probability and the seed driving it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareConfig {
    p: f64,
    seed: u64,
}

impl DareConfig {
    /// Validates `0 <= p < 1`.
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !p.is_finite() || !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "drop probability must satisfy 0 <= p < 1, got {p}"
            )));
        }
        Ok(Self { p, seed })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Drops each delta independently with probability `p` and rescales the
/// survivors by `1/(1-p)`, which keeps the expected vector unchanged.
///
/// One uniform f64 draw per element, in flat order, so output is a pure
/// function of (input, seed).
pub fn dare(tv: &TaskVector, cfg: &DareConfig) -> Result<TaskVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (1.0 - cfg.p);
    let values: Vec<f32> = tv
        .values()
        .iter()
        .map(|&v| {
            if rng.gen::<f64>() < cfg.p {
                0.0
            } else {
                (v as f64 * scale) as f32
            }
        })
        .collect();
    TaskVector::new(tv.layout().clone(), values)
}
