//! Labeled frame generation and the `AIRD` binary container.
//!
//! Layout (little-endian): magic `AIRD`, version `u32`, bits-per-frame `u32`,
//! samples-per-frame `u32`, record count `u64`; then per record the Eb/N0 as `f32`,
//! the label bits packed LSB-first, `N` `f32` I samples and `N` `f32` Q samples.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use super::bits::{generate_bits, BitStream};
use super::channel::{apply_channel, ChannelConfig};
use super::hamming::INFO_BITS;
use super::iq::IqSignal;
use super::modem::{transmit, FRAME_SAMPLES};
use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

pub const DATASET_MAGIC: &[u8; 4] = b"AIRD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample<T> {
    pub info_bits: BitStream,
    pub signal: IqSignal<T>,
    pub ebn0_db: f64,
}

impl<T: Scalar> LabeledSample<T> {
    /// The noise-free transmitted waveform for this sample's bits.
    pub fn clean_component(&self) -> Result<IqSignal<T>> {
        transmit(&self.info_bits)
    }
}

/// Generates `count_per_ebn0` frames for each Eb/N0 in `ebn0_list`, in list order.
///
/// Sample `b * count + j` draws its bits and noise from its own stream, so the
/// result does not depend on the worker count.
pub fn generate_dataset<T: Scalar>(
    ebn0_list: &[f64],
    count_per_ebn0: usize,
    seed: u64,
) -> Result<Vec<LabeledSample<T>>> {
    if ebn0_list.is_empty() || count_per_ebn0 == 0 {
        return Err(invalid(
            "dataset needs at least one Eb/N0 point and one sample per point",
        ));
    }
    let total = ebn0_list.len() * count_per_ebn0;
    (0..total)
        .into_par_iter()
        .map(|idx| {
            let ebn0_db = ebn0_list[idx / count_per_ebn0];
            let mut rng = stream_rng(seed, idx as u64);
            let info_bits = generate_bits(INFO_BITS, &mut rng)?;
            let clean = transmit::<T>(&info_bits)?;
            let signal = apply_channel(&clean, &ChannelConfig::awgn(ebn0_db), &mut rng)?;
            Ok(LabeledSample {
                info_bits,
                signal,
                ebn0_db,
            })
        })
        .collect()
}

/// Groups samples by Eb/N0 (keyed in milli-dB to avoid float keys), preserving order.
pub fn group_by_ebn0<T>(samples: &[LabeledSample<T>]) -> BTreeMap<i64, Vec<&LabeledSample<T>>> {
    let mut map: BTreeMap<i64, Vec<&LabeledSample<T>>> = BTreeMap::new();
    for s in samples {
        map.entry(ebn0_key(s.ebn0_db)).or_default().push(s);
    }
    map
}

pub fn ebn0_key(ebn0_db: f64) -> i64 {
    (ebn0_db * 1000.0).round() as i64
}

pub fn write_dataset<T: Scalar, W: Write>(out: &mut W, samples: &[LabeledSample<T>]) -> Result<()> {
    let m = samples.first().map_or(INFO_BITS, |s| s.info_bits.len());
    let n = samples.first().map_or(FRAME_SAMPLES, |s| s.signal.len());
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(m as u32).to_le_bytes())?;
    out.write_all(&(n as u32).to_le_bytes())?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 + m.div_ceil(8) + 8 * n);
    for s in samples {
        if s.info_bits.len() != m || s.signal.len() != n {
            return Err(invalid("all records in a dataset must share frame dimensions"));
        }
        buf.clear();
        buf.extend_from_slice(&(s.ebn0_db as f32).to_le_bytes());
        buf.extend_from_slice(&s.info_bits.pack_lsb_first());
        for v in s.signal.i().iter().chain(s.signal.q()) {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_dataset<T: Scalar, R: Read>(input: &mut R) -> Result<Vec<LabeledSample<T>>> {
    let mut header = [0u8; 24];
    read_exact(input, &mut header, "dataset header")?;
    if &header[0..4] != DATASET_MAGIC {
        return Err(Error::Parse("not an AIRD dataset (bad magic)".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::Parse(format!("unsupported dataset version {version}")));
    }
    let m = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    if m == 0 || n == 0 {
        return Err(Error::Parse("dataset header declares empty frames".into()));
    }
    let bit_bytes = m.div_ceil(8);
    let mut rec = vec![0u8; 4 + bit_bytes + 8 * n];
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for r in 0..count {
        read_exact(input, &mut rec, &format!("record {r}"))?;
        let ebn0_db = f32::from_le_bytes(rec[0..4].try_into().unwrap()) as f64;
        let info_bits = BitStream::unpack_lsb_first(&rec[4..4 + bit_bytes], m)?;
        let floats: Vec<T> = rec[4 + bit_bytes..]
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let signal = IqSignal::new(floats[..n].to_vec(), floats[n..].to_vec())
            .map_err(|e| Error::Parse(format!("record {r}: {e}")))?;
        samples.push(LabeledSample {
            info_bits,
            signal,
            ebn0_db,
        });
    }
    Ok(samples)
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Parse(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

pub fn save_dataset<T: Scalar>(path: &std::path::Path, samples: &[LabeledSample<T>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: &std::path::Path) -> Result<Vec<LabeledSample<T>>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_dataset(&mut r)
}
