//! Universal adversarial perturbation built from training frames only.
//!
//! The build sweeps a training subset repeatedly. Whenever the current perturbation
//! leaves a frame's decisions untouched, one sign-gradient ascent step (against the
//! receiver's own clean decisions) is added, and the accumulated perturbation is
//! PAPR-clipped and renormalized to unit power. The sweep stops once the subset BER
//! under `sqrt(eps) * delta` reaches the target, or after `max_epochs`.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{papr, papr_clip, power, power_normalize, AttackBudget};
use crate::error::{invalid, Error, Result};
use crate::nn::ReceiverModel;
use crate::rng::{derive_seed, stream_rng};
use crate::scalar::Scalar;
use crate::signal::{BitStream, IqSignal, LabeledSample};

#[derive(Clone, Debug, PartialEq)]
pub struct UapConfig {
    /// Share of the training set drawn into the build subset, in `(0, 1]`.
    pub subset_fraction: f64,
    /// Target subset BER, in `(0, 1)`.
    pub desired_ber: f64,
    pub budget: AttackBudget,
    /// Size of one sign step relative to the unit-power perturbation.
    pub inner_step: f64,
    pub max_epochs: usize,
}

impl UapConfig {
    pub fn new(budget: AttackBudget) -> Self {
        Self {
            subset_fraction: 0.25,
            desired_ber: 0.3,
            budget,
            inner_step: 0.1,
            max_epochs: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(invalid(format!(
                "subset fraction {} outside (0, 1]",
                self.subset_fraction
            )));
        }
        if !(self.desired_ber > 0.0 && self.desired_ber < 1.0) {
            return Err(invalid(format!("desired BER {} outside (0, 1)", self.desired_ber)));
        }
        if !(self.inner_step > 0.0) || self.max_epochs == 0 {
            return Err(invalid("inner step and epoch limit must be positive"));
        }
        self.budget.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UapReport {
    pub epochs_used: usize,
    pub final_subset_ber: f64,
    /// `true` when the desired BER was reached, `false` when the epoch limit stopped the build.
    pub reached_target: bool,
    pub updates: usize,
    pub subset_size: usize,
}

/// Uniform draw without replacement of `ceil(fraction * len)` training indices.
pub fn uap_subset_indices(len: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(invalid("training set is empty"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("subset fraction {fraction} outside (0, 1]")));
    }
    let k = ((fraction * len as f64).ceil() as usize).clamp(1, len);
    let mut idx = sample(&mut stream_rng(derive_seed(seed, "uap-subset"), 0), len, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// `signal + sqrt(epsilon) * delta`.
pub fn apply_uap<T: Scalar>(signal: &IqSignal<T>, delta: &IqSignal<T>, epsilon: f64) -> Result<IqSignal<T>> {
    if signal.len() != delta.len() {
        return Err(invalid(format!(
            "perturbation has {} samples, signal {}",
            delta.len(),
            signal.len()
        )));
    }
    if epsilon == 0.0 {
        return Ok(signal.clone());
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("power limit {epsilon} must be non-negative")));
    }
    let p = power(delta)?;
    if (p - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("universal perturbation must have unit power, got {p}")));
    }
    signal.add_scaled(delta, T::from_f64_lossy(epsilon.sqrt()))
}

fn subset_ber<T: Scalar>(
    model: &ReceiverModel<T>,
    subset: &[&LabeledSample<T>],
    eps: &[f64],
    delta: Option<&IqSignal<T>>,
) -> Result<f64> {
    let errors: usize = subset
        .par_iter()
        .zip(eps)
        .map(|(s, &e)| -> Result<usize> {
            let sig = match delta {
                Some(d) => s.signal.add_scaled(d, T::from_f64_lossy(e.sqrt()))?,
                None => s.signal.clone(),
            };
            model.predict_bits(&sig)?.hamming_distance(&s.info_bits)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(errors as f64 / (subset.len() * model.m_bits()) as f64)
}

/// Builds a unit-power universal perturbation with PAPR at most `beta`.
pub fn build_uap<T: Scalar>(
    model: &ReceiverModel<T>,
    subset: &[&LabeledSample<T>],
    cfg: &UapConfig,
) -> Result<(IqSignal<T>, UapReport)> {
    cfg.validate()?;
    if subset.is_empty() {
        return Err(invalid("UAP subset is empty"));
    }
    let n = subset[0].signal.len();
    if subset.iter().any(|s| s.signal.len() != n) {
        return Err(invalid("UAP subset frames differ in length"));
    }
    let eps: Vec<f64> = subset
        .par_iter()
        .map(|s| -> Result<f64> {
            Ok(if cfg.budget.psr_db.is_some() {
                cfg.budget.resolved(power(&s.clean_component()?)?).epsilon
            } else {
                cfg.budget.epsilon
            })
        })
        .collect::<Result<_>>()?;
    let clean: Vec<BitStream> = subset
        .par_iter()
        .map(|s| model.predict_bits(&s.signal))
        .collect::<Result<_>>()?;
    let step = T::from_f64_lossy(cfg.inner_step);

    let mut delta = IqSignal::<T>::zeros(n);
    let mut updates = 0;
    let mut report = UapReport {
        epochs_used: 0,
        final_subset_ber: 0.0,
        reached_target: false,
        updates: 0,
        subset_size: subset.len(),
    };
    for epoch in 1..=cfg.max_epochs {
        for ((s, &e), reference) in subset.iter().zip(&eps).zip(&clean) {
            let adv = s.signal.add_scaled(&delta, T::from_f64_lossy(e.sqrt()))?;
            let grad = model.backprop(&adv, reference, None, true)?;
            let fooled = crate::nn::model::bits_from_probs(&grad.probs) != *reference;
            if fooled {
                continue;
            }
            let g = grad.input_grad.expect("input gradient requested");
            if g.values().iter().all(|v| v.is_zero()) {
                continue;
            }
            let dir = IqSignal::from_stacked(&g.values().iter().map(|v| v.sign0() * step).collect::<Vec<_>>())?;
            let raw = delta.try_add(&dir)?;
            let clipped = match papr_clip(&raw, cfg.budget.beta.max(1.0)) {
                Ok((c, _)) => c,
                // a step too sparse to meet the PAPR limit is skipped
                Err(Error::UndefinedInput(_)) => continue,
                Err(e) => return Err(e),
            };
            delta = power_normalize(&clipped)?;
            updates += 1;
        }
        report.epochs_used = epoch;
        if updates == 0 {
            break;
        }
        let ber = subset_ber(model, subset, &eps, Some(&delta))?;
        report.final_subset_ber = ber;
        log::info!("uap epoch {epoch}: subset BER {ber:.4} after {updates} updates");
        if ber >= cfg.desired_ber {
            report.reached_target = true;
            break;
        }
    }
    report.updates = updates;
    if updates == 0 {
        return Err(Error::DegenerateGradient);
    }
    debug_assert!(papr(&delta)? <= cfg.budget.beta.max(1.0) * (1.0 + 1e-9));
    Ok((delta, report))
}

/// UAP file: magic `AIRU`, version `u32`, then `f64` subset fraction, desired BER, PAPR
/// limit (linear), power limit, final subset BER, `u32` epochs used, `u8` reached
/// flag, followed by a one-record `AIRD` dataset holding the perturbation (label bits
/// zero, Eb/N0 zero).
pub const UAP_MAGIC: &[u8; 4] = b"AIRU";
pub const UAP_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct UapArtifact<T> {
    pub delta: IqSignal<T>,
    pub subset_fraction: f64,
    pub desired_ber: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub report: UapReport,
}

pub fn encode_uap<T: Scalar>(a: &UapArtifact<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(UAP_MAGIC);
    buf.extend_from_slice(&UAP_VERSION.to_le_bytes());
    for v in [
        a.subset_fraction,
        a.desired_ber,
        a.beta,
        a.epsilon,
        a.report.final_subset_ber,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(a.report.epochs_used as u32).to_le_bytes());
    buf.extend_from_slice(&(a.report.updates as u32).to_le_bytes());
    buf.extend_from_slice(&(a.report.subset_size as u32).to_le_bytes());
    buf.push(u8::from(a.report.reached_target));
    let record = LabeledSample {
        info_bits: BitStream::zeros(crate::signal::INFO_BITS),
        signal: a.delta.clone(),
        ebn0_db: 0.0,
    };
    crate::signal::write_dataset(&mut buf, std::slice::from_ref(&record))?;
    Ok(buf)
}

pub fn decode_uap<T: Scalar>(bytes: &[u8]) -> Result<UapArtifact<T>> {
    const HEAD: usize = 4 + 4 + 5 * 8 + 3 * 4 + 1;
    if bytes.len() < HEAD || &bytes[..4] != UAP_MAGIC {
        return Err(Error::Parse("not an AIRU perturbation file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != UAP_VERSION {
        return Err(Error::Parse(format!("unsupported UAP file version {version}")));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    let u = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let mut rest = &bytes[HEAD..];
    let records: Vec<LabeledSample<T>> = crate::signal::read_dataset(&mut rest)?;
    let [record] = <[LabeledSample<T>; 1]>::try_from(records)
        .map_err(|_| Error::Parse("UAP file must hold exactly one record".into()))?;
    Ok(UapArtifact {
        delta: record.signal,
        subset_fraction: f(0),
        desired_ber: f(1),
        beta: f(2),
        epsilon: f(3),
        report: UapReport {
            final_subset_ber: f(4),
            epochs_used: u(48),
            updates: u(52),
            subset_size: u(56),
            reached_target: bytes[60] != 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::power_normalize;
    use crate::signal::transmit;

    #[test]
    fn apply_examples() {
        let s = transmit::<f64>(&crate::signal::generate_bits(32, &mut stream_rng(0, 0)).unwrap()).unwrap();
        let t = transmit::<f64>(&crate::signal::generate_bits(32, &mut stream_rng(1, 0)).unwrap()).unwrap();
        let d = power_normalize(
            &IqSignal::new(
                (0..448).map(|n| (n as f64).sin()).collect(),
                (0..448).map(|n| (n as f64).cos()).collect(),
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(apply_uap(&s, &d, 0.0).unwrap(), s);
        let a = apply_uap(&s, &d, 0.3).unwrap();
        assert!((power(&a.try_sub(&s).unwrap()).unwrap() - 0.3).abs() < 1e-9);
        let b = apply_uap(&t, &d, 0.3).unwrap();
        let ta = a.try_sub(&s).unwrap();
        let tb = b.try_sub(&t).unwrap();
        for (x, y) in ta.i().iter().zip(tb.i()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(apply_uap(&s, &IqSignal::zeros(10), 0.3).is_err());
        assert!(apply_uap(&s, &d.scaled(2.0), 0.3).is_err());
    }

    #[test]
    fn subset_draw() {
        let idx = uap_subset_indices(1000, 0.25, 4).unwrap();
        assert_eq!(idx.len(), 250);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx, uap_subset_indices(1000, 0.25, 4).unwrap());
        assert_ne!(idx, uap_subset_indices(1000, 0.25, 5).unwrap());
        assert!(uap_subset_indices(0, 0.5, 0).is_err());
        assert!(uap_subset_indices(10, 0.0, 0).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let d = power_normalize(
            &IqSignal::<f32>::new((0..448).map(|n| (n as f32).sin()).collect(), vec![0.5; 448]).unwrap(),
        )
        .unwrap();
        let art = UapArtifact {
            delta: d,
            subset_fraction: 0.25,
            desired_ber: 0.3,
            beta: 1.585,
            epsilon: 0.316,
            report: UapReport {
                epochs_used: 3,
                final_subset_ber: 0.2,
                reached_target: false,
                updates: 17,
                subset_size: 40,
            },
        };
        let bytes = encode_uap(&art).unwrap();
        assert_eq!(decode_uap::<f32>(&bytes).unwrap(), art);
        assert!(decode_uap::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn config_ranges() {
        let b = AttackBudget::from_db(-5.0, 2.0, 1).unwrap();
        let mut c = UapConfig::new(b);
        assert!(c.validate().is_ok());
        c.subset_fraction = 1.5;
        assert!(c.validate().is_err());
        c.subset_fraction = 0.25;
        c.desired_ber = 1.0;
        assert!(c.validate().is_err());
    }
}
