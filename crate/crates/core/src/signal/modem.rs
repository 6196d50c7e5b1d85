//! BPSK mapping and raised-cosine pulse shaping.

use num_complex::Complex;

use super::bits::BitStream;
use super::hamming::hamming74_encode;
use super::iq::IqSignal;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

pub const SAMPLES_PER_SYMBOL: usize = 8;
pub const ROLLOFF: f64 = 0.5;
pub const SPAN_SYMBOLS: usize = 8;
/// Samples in one received frame: 56 coded symbols at 8 samples per symbol.
pub const FRAME_SAMPLES: usize = 448;

/// Bit 0 maps to `+1`, bit 1 to `-1`.
pub fn bpsk_modulate<T: Scalar>(coded: &BitStream) -> Result<Vec<Complex<T>>> {
    if coded.is_empty() {
        return Err(invalid("cannot modulate an empty bit stream"));
    }
    Ok(coded
        .as_slice()
        .iter()
        .map(|&b| {
            if b == 0 {
                Complex::new(T::one(), T::zero())
            } else {
                Complex::new(-T::one(), T::zero())
            }
        })
        .collect())
}

/// Continuous raised-cosine pulse at `t` symbol periods, unit peak at `t = 0`.
pub fn raised_cosine(t: f64, rolloff: f64) -> f64 {
    use std::f64::consts::PI;
    let sinc = if t.abs() < 1e-12 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    };
    let denom = 1.0 - (2.0 * rolloff * t).powi(2);
    if denom.abs() < 1e-10 {
        // limit at t = +-1/(2 rolloff)
        (PI / 4.0) * sinc
    } else {
        sinc * (PI * rolloff * t).cos() / denom
    }
}

/// Symmetric tap vector of length `span * sps + 1`, peak at the middle tap.
pub fn raised_cosine_taps(sps: usize, rolloff: f64, span_symbols: usize) -> Vec<f64> {
    let half = (span_symbols * sps / 2) as isize;
    (-half..=half)
        .map(|n| raised_cosine(n as f64 / sps as f64, rolloff))
        .collect()
}

/// Index of the decision sample for symbol `k`.
pub fn symbol_center(k: usize, sps: usize) -> usize {
    k * sps + sps / 2
}

/// Upsamples, filters with a truncated raised-cosine pulse and normalizes to unit
/// average power.
///
/// Symbol `k` is centred on sample `k * sps + sps / 2`; the output has exactly
/// `symbols.len() * sps` samples (tails beyond the frame are dropped).
pub fn pulse_shape<T: Scalar>(
    symbols: &[Complex<T>],
    sps: usize,
    rolloff: f64,
    span_symbols: usize,
) -> Result<IqSignal<T>> {
    if sps == 0 {
        return Err(invalid("samples per symbol must be at least 1"));
    }
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(invalid(format!("roll-off {rolloff} outside [0, 1]")));
    }
    if span_symbols < 2 || !span_symbols.is_multiple_of(2) {
        return Err(invalid(format!("filter span {span_symbols} must be even and >= 2")));
    }
    if symbols.is_empty() {
        return Err(invalid("no symbols to shape"));
    }
    let taps = raised_cosine_taps(sps, rolloff, span_symbols);
    let half = (taps.len() / 2) as isize;
    let n = symbols.len() * sps;
    let mut re = vec![0.0f64; n];
    let mut im = vec![0.0f64; n];
    for (k, s) in symbols.iter().enumerate() {
        let (sr, si) = (s.re.to_f64_lossy(), s.im.to_f64_lossy());
        if sr == 0.0 && si == 0.0 {
            continue;
        }
        let c = symbol_center(k, sps) as isize;
        let lo = (c - half).max(0);
        let hi = (c + half).min(n as isize - 1);
        for idx in lo..=hi {
            let h = taps[(idx - c + half) as usize];
            re[idx as usize] += sr * h;
            im[idx as usize] += si * h;
        }
    }
    let power = re.iter().chain(im.iter()).map(|v| v * v).sum::<f64>() / n as f64;
    let gain = if power > 0.0 { 1.0 / power.sqrt() } else { 1.0 };
    IqSignal::new(
        re.iter().map(|v| T::from_f64_lossy(v * gain)).collect(),
        im.iter().map(|v| T::from_f64_lossy(v * gain)).collect(),
    )
}

/// Full transmitter: Hamming(7,4), BPSK, raised-cosine shaping at the default settings.
pub fn transmit<T: Scalar>(info: &BitStream) -> Result<IqSignal<T>> {
    let coded = hamming74_encode(info)?;
    let symbols = bpsk_modulate::<T>(&coded)?;
    pulse_shape(&symbols, SAMPLES_PER_SYMBOL, ROLLOFF, SPAN_SYMBOLS)
}
