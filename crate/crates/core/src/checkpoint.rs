//! Flat parameter containers and task-vector arithmetic.
//!
//! A model is a [`Checkpoint`]: an ordered list of named tensors backed by one
//! flat `f32` buffer. A [`TaskVector`] is the element-wise difference between
//! a fine-tuned checkpoint and the pre-trained checkpoint it started from, and
//! shares the same layout. All arithmetic here is plain 32-bit float math in
//! tensor-declaration order, so results are reproducible bit for bit.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Shape and placement of one named tensor inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Start of this tensor's elements in the flat value buffer.
    pub offset: usize,
}

impl TensorSpec {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Validated tensor table shared by every container that uses it.
///
/// Construction guarantees unique names, positive dimensions, and offsets
/// that tile the flat buffer consecutively with no gaps.
#[derive(Debug, PartialEq, Eq)]
pub struct TensorLayout {
    specs: Vec<TensorSpec>,
    total_len: usize,
}

impl TensorLayout {
    /// Builds a layout from `(name, shape)` pairs in declaration order.
    pub fn new<S: Into<String>>(tensors: Vec<(S, Vec<usize>)>) -> Result<Arc<Self>> {
        if tensors.is_empty() {
            return Err(Error::InvalidArgument("layout declares no tensors".into()));
        }
        let mut specs = Vec::with_capacity(tensors.len());
        let mut offset = 0usize;
        for (name, shape) in tensors {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::InvalidArgument("tensor name is empty".into()));
            }
            if specs.iter().any(|s: &TensorSpec| s.name == name) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate tensor name `{name}`"
                )));
            }
            if shape.is_empty() || shape.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "tensor `{name}` has an empty or zero-sized shape {shape:?}"
                )));
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|c| c.checked_add(offset).map(|_| c))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("tensor `{name}` element count overflows"))
                })?;
            specs.push(TensorSpec {
                name,
                shape,
                offset,
            });
            offset += count;
        }
        Ok(Arc::new(TensorLayout {
            specs,
            total_len: offset,
        }))
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    /// Total number of scalar parameters across all tensors.
    pub fn total_len(&self) -> usize {
        self.total_len
    }

    /// Name of the tensor whose flat range contains `index`.
    pub fn tensor_containing(&self, index: usize) -> Option<&TensorSpec> {
        self.specs
            .iter()
            .rev()
            .find(|s| s.offset <= index && index < s.offset + s.element_count())
    }

    /// Flat value range of the tensor at position `i` in the table.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        let s = &self.specs[i];
        s.offset..s.offset + s.element_count()
    }
}

/// Checks two layouts describe the same tensors, naming the first offender.
pub(crate) fn ensure_same_layout(a: &Arc<TensorLayout>, b: &Arc<TensorLayout>) -> Result<()> {
    if Arc::ptr_eq(a, b) {
        return Ok(());
    }
    if a.specs.len() != b.specs.len() {
        return Err(Error::Mismatch(format!(
            "tensor counts differ: {} vs {}",
            a.specs.len(),
            b.specs.len()
        )));
    }
    for (sa, sb) in a.specs.iter().zip(&b.specs) {
        if sa.name != sb.name {
            return Err(Error::Mismatch(format!(
                "tensor name `{}` vs `{}` at offset {}",
                sa.name, sb.name, sa.offset
            )));
        }
        if sa.shape != sb.shape {
            return Err(Error::Mismatch(format!(
                "tensor `{}` shape {:?} vs {:?}",
                sa.name, sa.shape, sb.shape
            )));
        }
    }
    Ok(())
}

/// A full set of model parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    layout: Arc<TensorLayout>,
    values: Vec<f32>,
}

/// Difference between a fine-tuned checkpoint and its pre-trained base.
#[derive(Debug, Clone)]
pub struct TaskVector {
    layout: Arc<TensorLayout>,
    values: Vec<f32>,
}

macro_rules! container_impl {
    ($ty:ident) => {
        impl $ty {
            /// Wraps a flat value buffer; the length must match the layout.
            pub fn new(layout: Arc<TensorLayout>, values: Vec<f32>) -> Result<Self> {
                if values.len() != layout.total_len() {
                    return Err(Error::Mismatch(format!(
                        concat!(stringify!($ty), " has {} values but layout declares {}"),
                        values.len(),
                        layout.total_len()
                    )));
                }
                Ok(Self { layout, values })
            }

            pub fn layout(&self) -> &Arc<TensorLayout> {
                &self.layout
            }

            pub fn values(&self) -> &[f32] {
                &self.values
            }

            /// Number of scalar parameters.
            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            /// Flat values of the tensor named `name`.
            pub fn tensor(&self, name: &str) -> Option<&[f32]> {
                let spec = self.layout.specs().iter().find(|s| s.name == name)?;
                Some(&self.values[spec.offset..spec.offset + spec.element_count()])
            }

            /// Consumes the container, returning its value buffer.
            pub fn into_values(self) -> Vec<f32> {
                self.values
            }
        }
    };
}

container_impl!(Checkpoint);
container_impl!(TaskVector);

/// Task vector of a fine-tuned model: `fine_tuned - pre_trained`, element-wise.
pub fn diff(fine_tuned: &Checkpoint, pre_trained: &Checkpoint) -> Result<TaskVector> {
    ensure_same_layout(fine_tuned.layout(), pre_trained.layout())?;
    let values = fine_tuned
        .values
        .iter()
        .zip(&pre_trained.values)
        .map(|(ft, pre)| ft - pre)
        .collect();
    TaskVector::new(fine_tuned.layout.clone(), values)
}

/// Adds a scaled task vector onto a base checkpoint: `base + scale * tv`.
///
/// `scale == 0.0` returns the base values unchanged (no `-0.0 + 0.0` drift),
/// and `scale == 1.0` reproduces `base + tv` exactly, so diff followed by
/// apply at scale 1 restores the fine-tuned checkpoint.
pub fn apply(base: &Checkpoint, tv: &TaskVector, scale: f32) -> Result<Checkpoint> {
    ensure_same_layout(base.layout(), tv.layout())?;
    let values = if scale == 0.0 {
        base.values.clone()
    } else {
        base.values
            .iter()
            .zip(&tv.values)
            .map(|(b, t)| b + scale * t)
            .collect()
    };
    Checkpoint::new(base.layout.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_layout() -> Arc<TensorLayout> {
        TensorLayout::new(vec![
            ("layer0.weight", vec![4, 3]),
            ("layer0.bias", vec![4]),
            ("head.weight", vec![2, 4]),
        ])
        .unwrap()
    }

    fn random_checkpoint(layout: &Arc<TensorLayout>, seed: u64) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..layout.total_len())
            .map(|_| rng.gen_range(-2.0f32..2.0))
            .collect();
        Checkpoint::new(layout.clone(), values).unwrap()
    }

    #[test]
    fn layout_assigns_consecutive_offsets() {
        let layout = toy_layout();
        let offsets: Vec<usize> = layout.specs().iter().map(|s| s.offset).collect();
        assert_eq!(offsets, vec![0, 12, 16]);
        assert_eq!(layout.total_len(), 24);
        assert_eq!(layout.tensor_containing(13).unwrap().name, "layer0.bias");
        assert_eq!(layout.tensor_containing(23).unwrap().name, "head.weight");
        assert!(layout.tensor_containing(24).is_none());
    }

    #[test]
    fn layout_rejects_duplicates_and_zero_dims() {
        let err = TensorLayout::new(vec![("a", vec![2]), ("a", vec![3])]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let err = TensorLayout::new(vec![("a", vec![2, 0])]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let err = TensorLayout::new(Vec::<(&str, Vec<usize>)>::new()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn value_length_must_match_layout() {
        let layout = toy_layout();
        assert!(matches!(
            Checkpoint::new(layout, vec![0.0; 5]),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn diff_then_apply_restores_fine_tuned_bits() {
        // Fine-tuning moves each weight by a bounded relative amount, keeping
        // fine-tuned and base values same-signed and within a factor of two,
        // where f32 subtraction is exact and the round trip loses nothing.
        let layout = TensorLayout::new(vec![("w", vec![1000])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pre: Vec<f32> = (0..1000)
            .map(|_| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign * rng.gen_range(1e-3f32..10.0)
            })
            .collect();
        let ft: Vec<f32> = pre
            .iter()
            .map(|&p| p * (1.0 + rng.gen_range(-0.2f32..0.2)))
            .collect();
        let pre = Checkpoint::new(layout.clone(), pre).unwrap();
        let ft = Checkpoint::new(layout, ft).unwrap();

        let tv = diff(&ft, &pre).unwrap();
        let restored = apply(&pre, &tv, 1.0).unwrap();
        for (r, f) in restored.values().iter().zip(ft.values()) {
            assert_eq!(r.to_bits(), f.to_bits());
        }
    }

    #[test]
    fn apply_scale_zero_preserves_base_bits() {
        let layout = TensorLayout::new(vec![("w", vec![4])]).unwrap();
        let base = Checkpoint::new(layout.clone(), vec![-0.0, 1.5, -2.25, 0.0]).unwrap();
        let tv = TaskVector::new(layout, vec![1.0, -1.0, 3.0, 5.0]).unwrap();
        let out = apply(&base, &tv, 0.0).unwrap();
        for (o, b) in out.values().iter().zip(base.values()) {
            assert_eq!(o.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn apply_scales_linearly() {
        let layout = toy_layout();
        let base = random_checkpoint(&layout, 1);
        let other = random_checkpoint(&layout, 2);
        let tv = diff(&other, &base).unwrap();
        let half = apply(&base, &tv, 0.5).unwrap();
        for ((h, b), t) in half.values().iter().zip(base.values()).zip(tv.values()) {
            assert_eq!(*h, b + 0.5 * t);
        }
    }

    #[test]
    fn mismatch_names_first_offending_tensor() {
        let a = TensorLayout::new(vec![("a", vec![2]), ("b", vec![3])]).unwrap();
        let b = TensorLayout::new(vec![("a", vec![2]), ("c", vec![3])]).unwrap();
        let ca = Checkpoint::new(a, vec![0.0; 5]).unwrap();
        let cb = Checkpoint::new(b, vec![0.0; 5]).unwrap();
        let err = diff(&ca, &cb).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('b') && msg.contains('c'), "{msg}");
    }

    #[test]
    fn tensor_view_by_name() {
        let layout = toy_layout();
        let ckpt = random_checkpoint(&layout, 3);
        assert_eq!(ckpt.tensor("layer0.bias").unwrap().len(), 4);
        assert!(ckpt.tensor("nope").is_none());
    }
}
