//! Packed one-bit-per-parameter keep mask.

use crate::error::{Error, Result};

type Block = u64;
const BITS: usize = Block::BITS as usize;

/// Bitset over flat parameter indices, packed LSB-first.
///
/// Bit `d` lives in byte `d / 8` at bit position `d % 8`, so the serialized
/// form is `ceil(len / 8)` bytes and costs exactly one bit per parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    blocks: Vec<Block>,
    len: usize,
}

impl Mask {
    pub fn zeros(len: usize) -> Self {
        Mask {
            blocks: vec![0; len.div_ceil(BITS)],
            len,
        }
    }

    /// Number of maskable parameters (not the number of set bits).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, d: usize) -> bool {
        debug_assert!(d < self.len);
        self.blocks[d / BITS] >> (d % BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, d: usize) {
        debug_assert!(d < self.len);
        self.blocks[d / BITS] |= 1 << (d % BITS);
    }

    pub fn count_ones(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Indices of set bits in ascending order.
    pub fn ones(&self) -> Ones<'_> {
        Ones {
            mask: self,
            block_index: 0,
            current: self.blocks.first().copied().unwrap_or(0),
        }
    }

    /// Packed bytes, `ceil(len / 8)` of them, LSB-first within each byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(n);
        for block in &self.blocks {
            out.extend_from_slice(&block.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    /// Rebuilds a mask of `len` bits from its packed bytes.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Parse(format!(
                "mask of {len} bits needs {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let mut blocks = vec![0 as Block; len.div_ceil(BITS)];
        for (i, &b) in bytes.iter().enumerate() {
            blocks[i / 8] |= (b as Block) << (8 * (i % 8));
        }
        let mask = Mask { blocks, len };
        if mask.count_trailing_garbage() {
            return Err(Error::Parse(
                "mask has set bits beyond its declared length".into(),
            ));
        }
        Ok(mask)
    }

    fn count_trailing_garbage(&self) -> bool {
        let used = self.len % BITS;
        if used == 0 {
            return false;
        }
        match self.blocks.last() {
            Some(&last) => last >> used != 0,
            None => false,
        }
    }
}

pub struct Ones<'a> {
    mask: &'a Mask,
    block_index: usize,
    current: Block,
}

impl Iterator for Ones<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        while self.current == 0 {
            self.block_index += 1;
            if self.block_index >= self.mask.blocks.len() {
                return None;
            }
            self.current = self.mask.blocks[self.block_index];
        }
        let bit = self.current.trailing_zeros() as usize;
        self.current &= self.current - 1;
        Some(self.block_index * BITS + bit)
    }
}
