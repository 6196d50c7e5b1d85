//! `AIRM` checkpoint container.
//!
//! Little-endian layout: magic `AIRM`, version `u32`, architecture id (`u16` length +
//! UTF-8), head count `u32`, input length `u32`, layer layout (`u32` length + UTF-8),
//! tensor count `u32`, then per tensor: name (`u16` length + UTF-8), rank `u32`, dims
//! (`u32` each) and an `f32` payload. A SHA-256 of everything before it closes the file.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::layers::parse_layout;
use super::model::{architecture_layers, Architecture, ReceiverModel};
use super::tensor::RealTensor;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AIRM";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_checkpoint<T: Scalar>(model: &ReceiverModel<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let id = model.architecture().id().as_bytes();
    buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
    buf.extend_from_slice(id);
    buf.extend_from_slice(&(model.m_bits() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.input_len() as u32).to_le_bytes());
    let layout = model.layout();
    buf.extend_from_slice(&(layout.len() as u32).to_le_bytes());
    buf.extend_from_slice(layout.as_bytes());
    let mut tensors = Vec::new();
    model.visit_params(&mut |name, t| tensors.push((name, t)));
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.values() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse(format!("truncated checkpoint while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(len, what)?.to_vec()).map_err(|_| Error::Parse(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ReceiverModel<T>> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Parse("not an AIRM checkpoint (bad magic)".into()));
    }
    if bytes.len() < 8 + DIGEST_LEN {
        return Err(Error::Parse("truncated checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let mut cur = Cursor { bytes: body, pos: 4 };
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let id_len = cur.u16("architecture id length")? as usize;
    let arch: Architecture = cur
        .string(id_len, "architecture id")?
        .parse()
        .map_err(|e: Error| Error::Parse(e.to_string()))?;
    let m_bits = cur.u32("head count")? as usize;
    let input_len = cur.u32("input length")? as usize;
    let layout_len = cur.u32("layout length")? as usize;
    let layout = cur.string(layout_len, "layout")?;
    let mut layers = parse_layout::<T>(&layout)?;
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let name_len = cur.u16("tensor name length")? as usize;
        let name = cur.string(name_len, "tensor name")?;
        let rank = cur.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::Parse(format!("tensor {i} has implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| cur.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let payload = cur.take(n * 4, &format!("tensor `{name}`"))?;
        let values = payload
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        tensors.push((name, RealTensor::new(dims, values)?));
    }
    if cur.pos != body.len() {
        return Err(Error::Parse("trailing bytes after tensor section".into()));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }

    let mut expected = Vec::new();
    {
        let mut names = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            l.visit_params(&format!("layers.{i}"), &mut |n, t| names.push((n, t.shape().to_vec())));
        }
        expected.extend(names);
    }
    if expected.len() != tensors.len() {
        return Err(Error::Parse(format!(
            "layout needs {} tensors, file has {}",
            expected.len(),
            tensors.len()
        )));
    }
    for ((ename, eshape), (name, t)) in expected.iter().zip(&tensors) {
        if ename != name || eshape.as_slice() != t.shape() {
            return Err(Error::Parse(format!(
                "tensor `{name}` {:?} does not match layout slot `{ename}` {eshape:?}",
                t.shape()
            )));
        }
    }
    let slots = layers.iter_mut().flat_map(|l| l.params_mut());
    for (slot, (_, t)) in slots.zip(tensors) {
        *slot = t;
    }
    if arch != Architecture::Custom {
        let reference = super::layers::layout_string(&architecture_layers::<T>(arch, m_bits)?);
        if reference != layout {
            return Err(invalid(format!(
                "checkpoint layout does not match architecture `{arch}`"
            )));
        }
    }
    ReceiverModel::from_layers(arch, m_bits, input_len, layers)
}

pub fn save_checkpoint<T: Scalar>(model: &ReceiverModel<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(model))?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ReceiverModel<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint and insists on the given architecture.
pub fn load_checkpoint_as<T: Scalar>(path: &Path, arch: Architecture) -> Result<ReceiverModel<T>> {
    let model = load_checkpoint(path)?;
    if model.architecture() != arch {
        return Err(invalid(format!(
            "checkpoint holds `{}`, expected `{arch}`",
            model.architecture()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_receiver;
    use crate::rng::stream_rng;
    use crate::signal::IqSignal;
    use rand::Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        for arch in Architecture::ALL {
            let m = build_receiver::<f32>(arch, 5).unwrap();
            let back: ReceiverModel<f32> = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
            assert_eq!(back, m);
        }
        let m = build_receiver::<f32>(Architecture::CompactConv, 5).unwrap();
        let back: ReceiverModel<f32> = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        let mut rng = stream_rng(1, 1);
        for _ in 0..100 {
            let i: Vec<f32> = (0..448).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q: Vec<f32> = (0..448).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = IqSignal::new(i, q).unwrap();
            assert_eq!(m.forward(&s).unwrap(), back.forward(&s).unwrap());
        }
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = encode_checkpoint(&build_receiver::<f32>(Architecture::CompactConv, 5).unwrap());
        for cut in [10, 100, bytes.len() / 2, bytes.len() - 40] {
            let r = decode_checkpoint::<f32>(&bytes[..cut]);
            assert!(matches!(r, Err(Error::Parse(_))), "cut {cut}: {r:?}");
        }
        let mut flipped = bytes.clone();
        let mid = bytes.len() - 100;
        flipped[mid] ^= 0x40;
        assert!(matches!(decode_checkpoint::<f32>(&flipped), Err(Error::Checksum)));
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.airm");
        save_checkpoint(&build_receiver::<f32>(Architecture::ResnetLike, 1).unwrap(), &path).unwrap();
        assert!(load_checkpoint_as::<f32>(&path, Architecture::ResnetLike).is_ok());
        assert!(load_checkpoint_as::<f32>(&path, Architecture::CompactConv).is_err());

        // An id that disagrees with the stored layout is refused as well.
        let mut bytes = encode_checkpoint(&build_receiver::<f32>(Architecture::Vgg16Like, 1).unwrap());
        let body_len = bytes.len() - DIGEST_LEN;
        let id_at = 10;
        bytes[id_at..id_at + 10].copy_from_slice(b"vgg19-like");
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        assert!(decode_checkpoint::<f32>(&bytes).is_err());
    }
}
