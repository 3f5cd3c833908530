//! MSB-first bit buffers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitBuf {
    bytes: Vec<u8>,
    len: usize,
}

impl BitBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let len = bytes.len() * 8;
        BitBuf { bytes, len }
    }

    /// Bit length in bits; `bytes` may carry up to seven padding bits.
    pub fn from_parts(mut bytes: Vec<u8>, len: usize) -> Self {
        assert!(len <= bytes.len() * 8, "bit length exceeds buffer");
        bytes.truncate(len.div_ceil(8));
        let mut buf = BitBuf { bytes, len };
        buf.clear_padding();
        buf
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bytes[i >> 3] & (0x80 >> (i & 7)) != 0
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range");
        self.bytes[i >> 3] ^= 0x80 >> (i & 7);
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len >> 3] |= 0x80 >> (self.len & 7);
        }
        self.len += 1;
    }

    /// Appends the low `n` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 64);
        for k in (0..n).rev() {
            self.push((value >> k) & 1 == 1);
        }
    }

    pub fn extend(&mut self, other: &BitBuf) {
        if self.len.is_multiple_of(8) {
            self.bytes.extend_from_slice(&other.bytes);
            self.len += other.len;
        } else {
            for i in 0..other.len {
                self.push(other.get(i));
            }
        }
    }

    /// Reads `n` bits starting at `pos` as an unsigned integer.
    pub fn read_bits(&self, pos: usize, n: u32) -> Option<u64> {
        if pos + n as usize > self.len {
            return None;
        }
        let mut v = 0u64;
        for i in 0..n as usize {
            v = (v << 1) | self.get(pos + i) as u64;
        }
        Some(v)
    }

    /// Number of differing bits; buffers must have equal length.
    pub fn hamming(&self, other: &BitBuf) -> usize {
        assert_eq!(self.len, other.len, "hamming distance of unequal lengths");
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    fn clear_padding(&mut self) {
        let rem = self.len % 8;
        if rem != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xffu8 << (8 - rem);
            }
        }
    }
}

/// Sequential reader over a [`BitBuf`] window.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    buf: &'a BitBuf,
    pos: usize,
    end: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(buf: &'a BitBuf, start: usize, end: usize) -> Self {
        BitReader {
            buf,
            pos: start,
            end: end.min(buf.len()),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.end.saturating_sub(self.pos)
    }

    pub fn bit(&mut self) -> Option<bool> {
        if self.pos >= self.end {
            return None;
        }
        let b = self.buf.get(self.pos);
        self.pos += 1;
        Some(b)
    }

    pub fn bits(&mut self, n: u32) -> Option<u64> {
        if self.pos + n as usize > self.end {
            return None;
        }
        let v = self.buf.read_bits(self.pos, n)?;
        self.pos += n as usize;
        Some(v)
    }
}
