//! Magnitude-ranked subspace partitioning and per-subspace reweighting.
//!
//! A task vector is split into `M` near-equal-count bins by descending
//! magnitude: bin 0 holds the largest-magnitude entries. Scaling each bin by
//! its own weight turns the task vector into a weighted sum of subspace
//! components, which is the search space the optimizer explores. An all-ones
//! weight vector reproduces the original task vector bit for bit.

use crate::checkpoint::{apply, Checkpoint, TaskVector};
use crate::error::{Error, Result};

/// Descending-magnitude index order with ascending-index tie-break.
pub(crate) fn magnitude_cmp(values: &[f32]) -> impl Fn(&u32, &u32) -> std::cmp::Ordering + '_ {
    move |&a, &b| {
        let ma = values[a as usize].abs();
        let mb = values[b as usize].abs();
        mb.total_cmp(&ma).then_with(|| a.cmp(&b))
    }
}

/// How elements are ranked when forming bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScope {
    /// Rank all parameters together (the default).
    Global,
    /// Rank each tensor's parameters independently.
    PerTensor,
}

/// Assignment of every parameter to one of `M` magnitude-ranked bins.
#[derive(Debug, Clone)]
pub struct SubspacePartition {
    m: usize,
    bin_of: Vec<u32>,
    /// `m + 1` cumulative bin sizes; under [`PartitionScope::Global`] these
    /// are also cut points in the descending-magnitude rank order.
    boundaries: Vec<usize>,
}

impl SubspacePartition {
    pub fn subspace_count(&self) -> usize {
        self.m
    }

    /// Total number of partitioned parameters.
    pub fn len(&self) -> usize {
        self.bin_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_of.is_empty()
    }

    /// Bin id of each flat parameter index.
    pub fn bin_assignments(&self) -> &[u32] {
        &self.bin_of
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn bin_size(&self, k: usize) -> usize {
        self.boundaries[k + 1] - self.boundaries[k]
    }
}

/// Splits `count` items into `m` bins, the first `count % m` one larger.
fn bin_sizes(count: usize, m: usize) -> Vec<usize> {
    let base = count / m;
    let rem = count % m;
    (0..m).map(|k| base + usize::from(k < rem)).collect()
}

/// Partitions a task vector into `m` bins by global magnitude rank.
pub fn partition(tv: &TaskVector, m: usize) -> Result<SubspacePartition> {
    partition_scoped(tv, m, PartitionScope::Global)
}

/// Partitions with an explicit ranking scope.
pub fn partition_scoped(
    tv: &TaskVector,
    m: usize,
    scope: PartitionScope,
) -> Result<SubspacePartition> {
    let d = tv.len();
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!(
            "subspace count {m} must be in 1..={d}"
        )));
    }
    if u32::try_from(d).is_err() {
        return Err(Error::InvalidArgument(
            "task vector exceeds u32::MAX parameters".into(),
        ));
    }
    let values = tv.values();
    let mut bin_of = vec![0u32; d];
    let mut counts = vec![0usize; m];
    match scope {
        PartitionScope::Global => {
            assign_bins(values, 0..d, &mut bin_of, &mut counts, m);
        }
        PartitionScope::PerTensor => {
            for i in 0..tv.layout().specs().len() {
                let range = tv.layout().range(i);
                assign_bins(values, range, &mut bin_of, &mut counts, m);
            }
        }
    }
    let mut boundaries = Vec::with_capacity(m + 1);
    boundaries.push(0);
    for k in 0..m {
        boundaries.push(boundaries[k] + counts[k]);
    }
    Ok(SubspacePartition {
        m,
        bin_of,
        boundaries,
    })
}

fn assign_bins(
    values: &[f32],
    range: std::ops::Range<usize>,
    bin_of: &mut [u32],
    counts: &mut [usize],
    m: usize,
) {
    let mut order: Vec<u32> = (range.start as u32..range.end as u32).collect();
    order.sort_unstable_by(magnitude_cmp(values));
    let sizes = bin_sizes(order.len(), m);
    let mut rank = 0;
    for (k, &size) in sizes.iter().enumerate() {
        for &idx in &order[rank..rank + size] {
            bin_of[idx as usize] = k as u32;
        }
        counts[k] += size;
        rank += size;
    }
}

/// Per-subspace weights applied multiplicatively to a partitioned task vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn ones(m: usize) -> Self {
        WeightVector(vec![1.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn checked_bin_weights(part: &SubspacePartition, w: &WeightVector) -> Result<Vec<f32>> {
    if w.len() != part.subspace_count() {
        return Err(Error::InvalidArgument(format!(
            "weight vector has {} entries for {} subspaces",
            w.len(),
            part.subspace_count()
        )));
    }
    if let Some(bad) = w.0.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite subspace weight {bad}"
        )));
    }
    Ok(w.0.iter().map(|&v| v as f32).collect())
}

pub(crate) fn reweight_into(out: &mut [f32], values: &[f32], bin_of: &[u32], w: &[f32]) {
    for ((o, &v), &bin) in out.iter_mut().zip(values).zip(bin_of) {
        *o = w[bin as usize] * v;
    }
}

/// Scales each subspace of the task vector by its weight.
pub fn reweight(tv: &TaskVector, part: &SubspacePartition, w: &WeightVector) -> Result<TaskVector> {
    if part.len() != tv.len() {
        return Err(Error::Mismatch(format!(
            "partition covers {} parameters, task vector has {}",
            part.len(),
            tv.len()
        )));
    }
    let w32 = checked_bin_weights(part, w)?;
    let mut values = vec![0.0f32; tv.len()];
    reweight_into(&mut values, tv.values(), &part.bin_of, &w32);
    TaskVector::new(tv.layout().clone(), values)
}

/// Base model plus the reweighted task vector.
pub fn adjusted_model(
    pre: &Checkpoint,
    tv: &TaskVector,
    part: &SubspacePartition,
    w: &WeightVector,
) -> Result<Checkpoint> {
    let reweighted = reweight(tv, part, w)?;
    apply(pre, &reweighted, 1.0)
}
