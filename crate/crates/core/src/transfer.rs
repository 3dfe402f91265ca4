//! Knowledge transfer: grafting a pruned task vector onto a pre-trained model.
//!
//! A pruned task vector carries only the surviving deltas, so transfer is a
//! sparse update: `result = pre + lambda * expand(pruned)`. The rescale
//! coefficient `lambda` controls how strongly the donor task imprints on the
//! base model; `lambda = 1` reproduces [`PrunedTaskVector::reconstruct`]
//! bit for bit.

use crate::checkpoint::{ensure_same_layout, Checkpoint};
use crate::error::{Error, Result};
use crate::prune::{PrunedTaskVector, SparsityRatio};

/// Settings for a transfer run: how hard to scale the donor deltas and which
/// sparsity the donor vector was pruned at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    lambda: f64,
    ratio: SparsityRatio,
}

impl TransferConfig {
    /// Validates `lambda > 0` and finite.
    pub fn new(lambda: f64, ratio: SparsityRatio) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "transfer lambda must be finite and positive, got {lambda}"
            )));
        }
        Ok(Self { lambda, ratio })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ratio(&self) -> SparsityRatio {
        self.ratio
    }
}

/// Adds `lambda`-scaled surviving deltas to the base model.
///
/// The product is taken in f32 after a single cast of `lambda`, matching the
/// arithmetic used everywhere else a scaled delta lands on a model, so
/// `lambda = 1` is bit-exact to plain reconstruction.
pub fn transfer(
    pre: &Checkpoint,
    pruned: &PrunedTaskVector,
    cfg: &TransferConfig,
) -> Result<Checkpoint> {
    ensure_same_layout(pre.layout(), pruned.layout())?;
    let lambda = cfg.lambda as f32;
    let mut values = pre.values().to_vec();
    for (index, delta) in pruned.entries() {
        values[index] += lambda * delta;
    }
    Checkpoint::new(pre.layout().clone(), values)
}
