use super::bits::BitStream;
use super::hamming::{hamming74_decode, CODED_BITS};
use super::iq::IqSignal;
use super::modem::{symbol_center, FRAME_SAMPLES, SAMPLES_PER_SYMBOL};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Conventional hard-decision receiver: sample the in-phase rail at symbol centres,
/// slice by sign and syndrome-decode.
pub fn classical_receiver<T: Scalar>(r: &IqSignal<T>) -> Result<BitStream> {
    if r.len() != FRAME_SAMPLES {
        return Err(invalid(format!("expected {FRAME_SAMPLES} samples, got {}", r.len())));
    }
    let coded: Vec<u8> = (0..CODED_BITS)
        .map(|k| u8::from(r.i()[symbol_center(k, SAMPLES_PER_SYMBOL)] < T::zero()))
        .collect();
    hamming74_decode(&BitStream::new(coded)?)
}
