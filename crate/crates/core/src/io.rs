//! Binary checkpoint container.
//!
//! Layout, all little-endian with no padding:
//!
//! ```text
//! magic "NPSC" | u32 version | u32 tensor count
//! per tensor:  u16 name len | name bytes | u8 rank | rank x u64 dims
//! payload:     concatenated f32 tensor values in declared order
//! ```
//!
//! Task vectors reuse the same container; the two loaders differ only in the
//! type they return. Loading rejects bad magic, unknown versions, truncated
//! payloads, trailing bytes, and non-finite values, each with its own error.

use std::path::Path;
use std::sync::Arc;

use crate::checkpoint::{Checkpoint, TaskVector, TensorLayout};
use crate::error::{Error, Result};

pub(crate) const CHECKPOINT_MAGIC: [u8; 4] = *b"NPSC";
pub(crate) const FORMAT_VERSION: u32 = 1;

/// Bounds-checked little-endian slice reader.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what}: needed {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32_slice(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(count * 4, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub(crate) fn check_magic(r: &mut ByteReader, expected: [u8; 4]) -> Result<()> {
    let found: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub(crate) fn check_version(r: &mut ByteReader) -> Result<()> {
    let found = r.u32("format version")?;
    if found != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(())
}

/// Appends the container encoding of one parameter set to `out`.
pub(crate) fn encode_container(
    out: &mut Vec<u8>,
    layout: &TensorLayout,
    values: &[f32],
) -> Result<()> {
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count = u32::try_from(layout.specs().len())
        .map_err(|_| Error::InvalidArgument("more than u32::MAX tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for spec in layout.specs() {
        let name_len = u16::try_from(spec.name.len()).map_err(|_| {
            Error::InvalidArgument(format!("tensor name `{}` exceeds u16 length", spec.name))
        })?;
        let rank = u8::try_from(spec.shape.len()).map_err(|_| {
            Error::InvalidArgument(format!("tensor `{}` rank exceeds u8", spec.name))
        })?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(rank);
        for &dim in &spec.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
    }
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Decodes one container from the reader, leaving the position after it.
pub(crate) fn decode_container(r: &mut ByteReader) -> Result<(Arc<TensorLayout>, Vec<f32>)> {
    check_magic(r, CHECKPOINT_MAGIC)?;
    check_version(r)?;
    let count = r.u32("tensor count")? as usize;
    if count == 0 {
        return Err(Error::Parse("container declares zero tensors".into()));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Parse(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let dim = r.u64("tensor dimension")?;
            let dim = usize::try_from(dim)
                .map_err(|_| Error::Parse(format!("tensor `{name}` dimension overflows")))?;
            shape.push(dim);
        }
        tensors.push((name, shape));
    }
    let layout = TensorLayout::new(tensors).map_err(|e| Error::Parse(e.to_string()))?;
    let values = r.f32_slice(layout.total_len(), "tensor payload")?;
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        let tensor = layout
            .tensor_containing(index)
            .map(|s| s.name.clone())
            .unwrap_or_default();
        return Err(Error::NonFinite { tensor, index });
    }
    Ok((layout, values))
}

fn decode_single(bytes: &[u8]) -> Result<(Arc<TensorLayout>, Vec<f32>)> {
    let mut r = ByteReader::new(bytes);
    let parsed = decode_container(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Parse(format!(
            "{} trailing bytes after container payload",
            r.remaining()
        )));
    }
    Ok(parsed)
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, ckpt: &Checkpoint) -> Result<()> {
    let mut bytes = Vec::new();
    encode_container(&mut bytes, ckpt.layout(), ckpt.values())?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let (layout, values) = decode_single(&bytes)?;
    Checkpoint::new(layout, values)
}

/// Task vectors share the checkpoint container byte layout.
pub fn save_task_vector<P: AsRef<Path>>(path: P, tv: &TaskVector) -> Result<()> {
    let mut bytes = Vec::new();
    encode_container(&mut bytes, tv.layout(), tv.values())?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_task_vector<P: AsRef<Path>>(path: P) -> Result<TaskVector> {
    let bytes = std::fs::read(path)?;
    let (layout, values) = decode_single(&bytes)?;
    TaskVector::new(layout, values)
}
