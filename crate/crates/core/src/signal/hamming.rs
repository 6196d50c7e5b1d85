//! Systematic Hamming(7,4) code, `G = [I4 | P]`, `H = [P^T | I3]`.

use super::bits::BitStream;
use crate::error::{invalid, Result};

pub const INFO_BITS: usize = 32;
pub const CODED_BITS: usize = 56;

/// Parity contribution of each data bit, as `[p1, p2, p3]`.
const PARITY: [[u8; 3]; 4] = [[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]];

/// Maps a nonzero syndrome (p1 + 2 p2 + 4 p3) to the erroneous codeword position.
const SYNDROME_POSITION: [Option<usize>; 8] = {
    let mut table = [None; 8];
    let mut pos = 0;
    while pos < 7 {
        let col = column(pos);
        table[(col[0] + 2 * col[1] + 4 * col[2]) as usize] = Some(pos);
        pos += 1;
    }
    table
};

const fn column(pos: usize) -> [u8; 3] {
    if pos < 4 {
        PARITY[pos]
    } else {
        let mut c = [0; 3];
        c[pos - 4] = 1;
        c
    }
}

pub fn encode_nibble(data: [u8; 4]) -> [u8; 7] {
    let mut cw = [data[0], data[1], data[2], data[3], 0, 0, 0];
    for (d, row) in data.iter().zip(PARITY.iter()) {
        for (p, &bit) in row.iter().enumerate() {
            cw[4 + p] ^= d & bit;
        }
    }
    cw
}

pub fn syndrome(cw: &[u8; 7]) -> [u8; 3] {
    let mut s = [0u8; 3];
    for (pos, &bit) in cw.iter().enumerate() {
        let col = column(pos);
        for k in 0..3 {
            s[k] ^= bit & col[k];
        }
    }
    s
}

/// Corrects at most one bit error and returns the data nibble.
pub fn decode_codeword(cw: [u8; 7]) -> [u8; 4] {
    let s = syndrome(&cw);
    let mut fixed = cw;
    if let Some(pos) = SYNDROME_POSITION[(s[0] + 2 * s[1] + 4 * s[2]) as usize] {
        fixed[pos] ^= 1;
    }
    [fixed[0], fixed[1], fixed[2], fixed[3]]
}

/// Encodes the 32-bit information stream into eight codewords (56 bits).
pub fn hamming74_encode(info: &BitStream) -> Result<BitStream> {
    if info.len() != INFO_BITS {
        return Err(invalid(format!(
            "expected {INFO_BITS} information bits, got {}",
            info.len()
        )));
    }
    let mut out = Vec::with_capacity(CODED_BITS);
    for nib in info.as_slice().chunks_exact(4) {
        out.extend_from_slice(&encode_nibble([nib[0], nib[1], nib[2], nib[3]]));
    }
    BitStream::new(out)
}

/// Syndrome-decodes 56 coded bits back to 32 information bits.
pub fn hamming74_decode(coded: &BitStream) -> Result<BitStream> {
    if coded.len() != CODED_BITS {
        return Err(invalid(format!(
            "expected {CODED_BITS} coded bits, got {}",
            coded.len()
        )));
    }
    let mut out = Vec::with_capacity(INFO_BITS);
    for cw in coded.as_slice().chunks_exact(7) {
        let mut block = [0u8; 7];
        block.copy_from_slice(cw);
        out.extend_from_slice(&decode_codeword(block));
    }
    BitStream::new(out)
}
