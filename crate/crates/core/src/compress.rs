//! Compressed multi-task storage: one dense base checkpoint plus, per task,
//! a packed keep-mask and the surviving sparse deltas.
//!
//! Reconstructing a task adds its surviving deltas back onto the base, so a
//! bundle reproduces every pruned fine-tuned model bit for bit while storing
//! the dense parameters only once.
//!
//! # File format (`NPSB`, little-endian)
//!
//! ```text
//! magic "NPSB" | u32 version | base container (same encoding as `NPSC` files)
//! u32 task count
//! per task:
//!   u16 name length | name bytes (UTF-8)
//!   f64 sparsity ratio
//!   u64 kept count
//!   packed mask, ceil(D/8) bytes, LSB-first
//!   kept f32 values in ascending flat-index order
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::checkpoint::{ensure_same_layout, Checkpoint};
use crate::error::{Error, Result};
use crate::io::{check_magic, check_version, decode_container, encode_container, ByteReader};
use crate::mask::Mask;
use crate::prune::{PrunedTaskVector, SparsityRatio};
use crate::subspace::WeightVector;

pub(crate) const BUNDLE_MAGIC: [u8; 4] = *b"NPSB";

/// A base checkpoint and the pruned task vectors stored against it.
#[derive(Debug, Clone)]
pub struct CompressedBundle {
    base: Checkpoint,
    entries: Vec<(String, PrunedTaskVector)>,
    format_version: u32,
}

/// Bundles pruned task vectors with their shared base checkpoint.
///
/// Task names must be unique and every vector must match the base layout. An
/// empty bundle is legal; it stores just the base.
pub fn compress(
    base: Checkpoint,
    entries: Vec<(String, PrunedTaskVector)>,
) -> Result<CompressedBundle> {
    let mut seen = HashSet::new();
    for (name, pruned) in &entries {
        if name.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "task name of {} bytes exceeds the u16 length field",
                name.len()
            )));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate task name {name:?}"
            )));
        }
        ensure_same_layout(base.layout(), pruned.layout())?;
    }
    if entries.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument(
            "more than u32::MAX tasks in one bundle".into(),
        ));
    }
    Ok(CompressedBundle {
        base,
        entries,
        format_version: crate::io::FORMAT_VERSION,
    })
}

impl CompressedBundle {
    pub fn base(&self) -> &Checkpoint {
        &self.base
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn task_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(name, _)| name.as_str())
    }

    pub fn get(&self, task: &str) -> Option<&PrunedTaskVector> {
        self.entries
            .iter()
            .find(|(name, _)| name == task)
            .map(|(_, p)| p)
    }

    /// Rebuilds the pruned fine-tuned model for one stored task.
    pub fn reconstruct(&self, task: &str) -> Result<Checkpoint> {
        let pruned = self
            .get(task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))?;
        pruned.reconstruct(&self.base)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&BUNDLE_MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        encode_container(&mut out, self.base.layout(), self.base.values())?;
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, pruned) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&pruned.ratio().value().to_le_bytes());
            out.extend_from_slice(&(pruned.kept_values().len() as u64).to_le_bytes());
            out.extend_from_slice(&pruned.mask().to_bytes());
            for v in pruned.kept_values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        check_magic(&mut r, BUNDLE_MAGIC)?;
        check_version(&mut r)?;
        let (layout, values) = decode_container(&mut r)?;
        let base = Checkpoint::new(layout.clone(), values)?;
        let count = r.u32("task count")? as usize;
        let entries = decode_entries(&mut r, &layout, count)?;
        if r.remaining() != 0 {
            return Err(Error::Parse(format!(
                "{} trailing bytes after bundle payload",
                r.remaining()
            )));
        }
        Ok(CompressedBundle {
            base,
            entries,
            format_version: crate::io::FORMAT_VERSION,
        })
    }
}

fn decode_entries(
    r: &mut ByteReader,
    layout: &Arc<crate::checkpoint::TensorLayout>,
    count: usize,
) -> Result<Vec<(String, PrunedTaskVector)>> {
    let d = layout.total_len();
    let mask_bytes = d.div_ceil(8);
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u16("task name length")? as usize;
        let name_raw = r.take(name_len, "task name")?;
        let name = std::str::from_utf8(name_raw)
            .map_err(|_| Error::Parse(format!("task {i} name is not UTF-8")))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Parse(format!(
                "duplicate task name {name:?} in bundle"
            )));
        }
        let ratio = SparsityRatio::new(r.f64("sparsity ratio")?)
            .map_err(|e| Error::Parse(format!("task {name:?}: {e}")))?;
        let declared = r.u64("kept count")?;
        let kept = usize::try_from(declared)
            .map_err(|_| Error::Parse(format!("task {name:?} kept count overflows")))?;
        let mask = Mask::from_bytes(r.take(mask_bytes, "packed mask")?, d)?;
        if mask.count_ones() != kept {
            return Err(Error::Parse(format!(
                "task {name:?} declares {kept} kept values but its mask keeps {}",
                mask.count_ones()
            )));
        }
        let kept_values = r.f32_slice(kept, "kept values")?;
        for (&value, index) in kept_values.iter().zip(mask.ones()) {
            if !value.is_finite() {
                let tensor = layout
                    .tensor_containing(index)
                    .map(|s| s.name.clone())
                    .unwrap_or_default();
                return Err(Error::NonFinite { tensor, index });
            }
        }
        // Subspace weights are search metadata, not needed to reconstruct;
        // a loaded entry reports the neutral single unit weight.
        let pruned = PrunedTaskVector::new(
            layout.clone(),
            mask,
            kept_values,
            WeightVector::ones(1),
            ratio,
        )?;
        entries.push((name, pruned));
    }
    Ok(entries)
}

pub fn save_bundle<P: AsRef<Path>>(path: P, bundle: &CompressedBundle) -> Result<()> {
    Ok(fs::write(path, bundle.to_bytes()?)?)
}

pub fn load_bundle<P: AsRef<Path>>(path: P) -> Result<CompressedBundle> {
    CompressedBundle::from_bytes(&fs::read(path)?)
}
