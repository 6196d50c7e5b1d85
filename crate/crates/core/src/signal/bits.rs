use rand::Rng;

use crate::error::{invalid, Result};

/// Ordered sequence of hard bits, each 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct BitStream(Vec<u8>);

impl BitStream {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(invalid(format!("bit value {b} is not 0 or 1")));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    pub fn xor(&self, other: &BitStream) -> Result<BitStream> {
        if self.len() != other.len() {
            return Err(invalid("xor of bit streams with different lengths"));
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect()))
    }

    pub fn complement(&self) -> BitStream {
        Self(self.0.iter().map(|b| b ^ 1).collect())
    }

    /// Number of positions where the two streams differ.
    pub fn hamming_distance(&self, other: &BitStream) -> Result<usize> {
        if self.len() != other.len() {
            return Err(invalid("hamming distance of bit streams with different lengths"));
        }
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }

    /// Packs the bits LSB-first into bytes.
    pub fn pack_lsb_first(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len().div_ceil(8)];
        for (i, &b) in self.0.iter().enumerate() {
            out[i / 8] |= b << (i % 8);
        }
        out
    }

    pub fn unpack_lsb_first(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() * 8 < len {
            return Err(invalid("not enough bytes to unpack bit stream"));
        }
        Ok(Self((0..len).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()))
    }
}

impl std::ops::Index<usize> for BitStream {
    type Output = u8;

    fn index(&self, idx: usize) -> &u8 {
        &self.0[idx]
    }
}

/// Draws `m` i.i.d. uniform bits.
pub fn generate_bits<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<BitStream> {
    if m == 0 {
        return Err(invalid("bit count must be positive"));
    }
    Ok(BitStream((0..m).map(|_| rng.gen_range(0..=1u8)).collect()))
}
