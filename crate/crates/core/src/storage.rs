//! Storage accounting: exact bit costs of serving N tasks under different
//! retention strategies, assuming one parameter costs 32 bits.
//!
//! With P total parameters, of which P' are tunable and F frozen (P = P' + F),
//! the four strategies cost:
//!
//! ```text
//! fine-tuned models   32 * (N*P' + F)        every task keeps its dense copy
//! single merged model 32 * P                 one model serves all tasks
//! mask + sign bases   (64+N)*P' + 32*F       two dense bases plus N 1-bit masks
//! sparse delta bundle 32*P + N*(32*ceil(r*P') + P')
//! ```
//!
//! The last line is this crate's bundle format: one dense base, then per task
//! a 1-bit/parameter keep-mask and the kept values as f32. The kept count uses
//! the same ceiling rule as the pruning mask, so the report matches the bytes
//! [`crate::compress`] actually writes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::prune::{kept_count, SparsityRatio};

/// Exact per-strategy bit counts for one (N, P, P', F, r) configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StorageReport {
    pub tasks: u64,
    pub total_params: u64,
    pub tunable_params: u64,
    pub frozen_params: u64,
    pub ratio: f64,
    pub fine_tuned_bits: u64,
    pub single_model_bits: u64,
    pub tallmask_bits: u64,
    pub nps_bits: u64,
}

impl StorageReport {
    /// Sparse-bundle cost as a fraction of storing every fine-tuned model.
    pub fn nps_to_fine_tuned_ratio(&self) -> f64 {
        self.nps_bits as f64 / self.fine_tuned_bits as f64
    }
}

fn overflow() -> Error {
    Error::Numeric("storage bit count overflows 64 bits".into())
}

fn mul(a: u64, b: u64) -> Result<u64> {
    a.checked_mul(b).ok_or_else(overflow)
}

fn add(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b).ok_or_else(overflow)
}

/// Computes the four storage costs with checked integer arithmetic.
pub fn storage_report(
    tasks: u64,
    total_params: u64,
    tunable_params: u64,
    frozen_params: u64,
    ratio: SparsityRatio,
) -> Result<StorageReport> {
    if tasks == 0 {
        return Err(Error::InvalidArgument(
            "storage report needs at least one task".into(),
        ));
    }
    if tunable_params == 0 {
        return Err(Error::InvalidArgument(
            "storage report needs at least one tunable parameter".into(),
        ));
    }
    match tunable_params.checked_add(frozen_params) {
        Some(sum) if sum == total_params => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "inconsistent parameter counts: {total_params} total vs {tunable_params} tunable + {frozen_params} frozen"
            )));
        }
    }
    let tunable_usize = usize::try_from(tunable_params).map_err(|_| {
        Error::InvalidArgument("tunable parameter count exceeds the platform pointer width".into())
    })?;
    let kept = kept_count(ratio.value(), tunable_usize) as u64;

    let fine_tuned_bits = mul(32, add(mul(tasks, tunable_params)?, frozen_params)?)?;
    let single_model_bits = mul(32, total_params)?;
    let tallmask_bits = add(
        mul(add(64, tasks)?, tunable_params)?,
        mul(32, frozen_params)?,
    )?;
    let per_task = add(mul(32, kept)?, tunable_params)?;
    let nps_bits = add(mul(32, total_params)?, mul(tasks, per_task)?)?;

    Ok(StorageReport {
        tasks,
        total_params,
        tunable_params,
        frozen_params,
        ratio: ratio.value(),
        fine_tuned_bits,
        single_model_bits,
        tallmask_bits,
        nps_bits,
    })
}
