//! Scalar quality metrics for merged and transferred models.

use crate::error::{Error, Result};

/// Mean over tasks of merged accuracy divided by that task's own fine-tuned
/// accuracy. 1.0 means the merge gave up nothing anywhere.
pub fn normalized_accuracy(merged: &[f64], fine_tuned: &[f64]) -> Result<f64> {
    if merged.is_empty() || merged.len() != fine_tuned.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching non-empty accuracy lists, got {} merged and {} fine-tuned",
            merged.len(),
            fine_tuned.len()
        )));
    }
    for (i, (&m, &f)) in merged.iter().zip(fine_tuned).enumerate() {
        if !m.is_finite() || !f.is_finite() || m < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "accuracy for task {i} is not a finite non-negative number"
            )));
        }
        if f <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "fine-tuned accuracy for task {i} is {f}; normalization would divide by zero"
            )));
        }
    }
    let sum: f64 = merged.iter().zip(fine_tuned).map(|(m, f)| m / f).sum();
    Ok(sum / merged.len() as f64)
}

/// Harmonic mean of average origin-task and average target-task performance.
///
/// Equal inputs return that value directly; the closed form `2ab/(a+b)` can
/// land one rounding step away from its own fixed point.
pub fn h_score(avg_origin: f64, avg_target: f64) -> Result<f64> {
    if !avg_origin.is_finite() || !avg_target.is_finite() || avg_origin < 0.0 || avg_target < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "averages must be finite and non-negative, got {avg_origin} and {avg_target}"
        )));
    }
    if avg_origin == 0.0 && avg_target == 0.0 {
        return Err(Error::InvalidArgument(
            "harmonic mean of two zero averages is undefined".into(),
        ));
    }
    if avg_origin == avg_target {
        return Ok(avg_origin);
    }
    Ok(2.0 * avg_origin * avg_target / (avg_origin + avg_target))
}
