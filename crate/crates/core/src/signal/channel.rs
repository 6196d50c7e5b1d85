//! Baseband channel: optional FIR taps, frequency/phase rotation, AWGN.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use super::hamming::INFO_BITS;
use super::iq::IqSignal;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    /// `None` disables the noise term entirely.
    pub ebn0_db: Option<f64>,
    /// Cycles per sample.
    pub freq_offset: f64,
    /// Radians.
    pub phase_offset: f64,
    /// Channel taps; `None` is a single unit tap.
    pub impulse_response: Option<Vec<Complex<f64>>>,
    /// Information bits carried by one frame, used to define Eb.
    pub info_bits: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            ebn0_db: None,
            freq_offset: 0.0,
            phase_offset: 0.0,
            impulse_response: None,
            info_bits: INFO_BITS,
        }
    }
}

impl ChannelConfig {
    pub fn awgn(ebn0_db: f64) -> Self {
        Self {
            ebn0_db: Some(ebn0_db),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(e) = self.ebn0_db {
            if !e.is_finite() {
                return Err(invalid("Eb/N0 must be finite"));
            }
        }
        if matches!(&self.impulse_response, Some(h) if h.is_empty()) {
            return Err(invalid("channel impulse response must be non-empty"));
        }
        if self.info_bits == 0 {
            return Err(invalid("frame must carry at least one information bit"));
        }
        Ok(())
    }
}

/// Per-complex-sample noise variance for a frame of `n_samples` samples carrying
/// `n_info_bits` bits, with Eb taken as total frame energy over information bits.
pub fn noise_variance_from_ebn0(ebn0_db: f64, signal_power: f64, n_samples: usize, n_info_bits: usize) -> f64 {
    signal_power * n_samples as f64 / (n_info_bits as f64 * 10f64.powf(ebn0_db / 10.0))
}

/// `y(n) = (x * h)(n) e^{j(2 pi df n + theta)} + w(n)`.
pub fn apply_channel<T: Scalar, R: Rng + ?Sized>(
    x: &IqSignal<T>,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<IqSignal<T>> {
    if x.is_empty() {
        return Err(invalid("cannot pass an empty signal through the channel"));
    }
    cfg.validate()?;
    let n = x.len();
    let rotate = cfg.freq_offset != 0.0 || cfg.phase_offset != 0.0;

    let mut y = if cfg.impulse_response.is_none() && !rotate {
        x.clone()
    } else {
        let input: Vec<Complex<f64>> = x
            .to_complex()
            .iter()
            .map(|c| Complex::new(c.re.to_f64_lossy(), c.im.to_f64_lossy()))
            .collect();
        let filtered: Vec<Complex<f64>> = match &cfg.impulse_response {
            None => input,
            Some(h) => (0..n)
                .map(|m| {
                    h.iter()
                        .enumerate()
                        .filter(|(l, _)| *l <= m)
                        .map(|(l, &tap)| tap * input[m - l])
                        .sum()
                })
                .collect(),
        };
        let out: Vec<Complex<T>> = filtered
            .iter()
            .enumerate()
            .map(|(m, &v)| {
                let phi = 2.0 * std::f64::consts::PI * cfg.freq_offset * m as f64 + cfg.phase_offset;
                let r = v * Complex::from_polar(1.0, phi);
                Complex::new(T::from_f64_lossy(r.re), T::from_f64_lossy(r.im))
            })
            .collect();
        IqSignal::from_complex(&out)
    };

    if let Some(ebn0_db) = cfg.ebn0_db {
        let power = y.energy().to_f64_lossy() / n as f64;
        let var = noise_variance_from_ebn0(ebn0_db, power, n, cfg.info_bits);
        let std = (var / 2.0).sqrt();
        for v in y.i_mut() {
            let w: f64 = rng.sample(StandardNormal);
            *v += T::from_f64_lossy(std * w);
        }
        for v in y.q_mut() {
            let w: f64 = rng.sample(StandardNormal);
            *v += T::from_f64_lossy(std * w);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::signal::bits::generate_bits;
    use crate::signal::modem::transmit;

    fn frame() -> IqSignal<f64> {
        transmit(&generate_bits(32, &mut stream_rng(11, 0)).unwrap()).unwrap()
    }

    #[test]
    fn variance_formula() {
        assert!((noise_variance_from_ebn0(0.0, 1.0, 448, 32) - 14.0).abs() < 1e-12);
        assert!((noise_variance_from_ebn0(10.0, 1.0, 448, 32) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn identity_without_noise() {
        let x = frame();
        let y = apply_channel(&x, &ChannelConfig::default(), &mut stream_rng(0, 0)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn phase_pi_negates() {
        let x = frame();
        let cfg = ChannelConfig {
            phase_offset: std::f64::consts::PI,
            ..ChannelConfig::default()
        };
        let y = apply_channel(&x, &cfg, &mut stream_rng(0, 0)).unwrap();
        for n in 0..x.len() {
            assert!((y.i()[n] + x.i()[n]).abs() < 1e-12);
            assert!((y.q()[n] + x.q()[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_tap_and_delay() {
        let x = frame();
        let cfg = ChannelConfig {
            impulse_response: Some(vec![Complex::new(0.0, 0.0), Complex::new(1.0, 0.0)]),
            ..ChannelConfig::default()
        };
        let y = apply_channel(&x, &cfg, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(y.i()[0], 0.0);
        for n in 1..x.len() {
            assert!((y.i()[n] - x.i()[n - 1]).abs() < 1e-12);
        }
        let empty = ChannelConfig {
            impulse_response: Some(vec![]),
            ..ChannelConfig::default()
        };
        assert!(apply_channel(&x, &empty, &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn noise_variance_matches_target() {
        // 224 frames x 448 samples ~ 1e5 complex samples at 0 dB, sigma^2 = 14
        let x = frame();
        let cfg = ChannelConfig::awgn(0.0);
        let mut rng = stream_rng(5, 5);
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..224 {
            let y = apply_channel(&x, &cfg, &mut rng).unwrap();
            let w = y.try_sub(&x).unwrap();
            acc += w.energy();
            count += w.len();
        }
        let var = acc / count as f64;
        assert!((var / 14.0 - 1.0).abs() < 0.05, "variance {var}");
    }
}
