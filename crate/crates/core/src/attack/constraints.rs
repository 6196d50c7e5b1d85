//! Power and PAPR measures and the projections that enforce them.

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::signal::IqSignal;

/// Clip rounds attempted before switching to the closed-form clip level.
pub const MAX_CLIP_ROUNDS: usize = 20;
/// Relative slack accepted on the PAPR limit.
pub const PAPR_TOLERANCE: f64 = 1e-9;

/// Mean `|x(n)|^2`.
pub fn power<T: Scalar>(x: &IqSignal<T>) -> Result<f64> {
    if x.is_empty() {
        return Err(invalid("power of an empty signal"));
    }
    Ok(x.magnitudes_sq().map(|v| v.to_f64_lossy()).sum::<f64>() / x.len() as f64)
}

/// `max |x(n)|^2 / mean |x(n)|^2`.
pub fn papr<T: Scalar>(x: &IqSignal<T>) -> Result<f64> {
    let p = power(x)?;
    if p == 0.0 {
        return Err(Error::UndefinedInput("PAPR of an all-zero signal".into()));
    }
    let peak = x.magnitudes_sq().map(|v| v.to_f64_lossy()).fold(0.0, f64::max);
    Ok(peak / p)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipReport {
    /// Clip passes applied (0 when the input already met the limit).
    pub rounds: usize,
    /// Whether the iteration was finished with the closed-form clip level.
    pub closed_form: bool,
}

fn clip_to<T: Scalar>(x: &IqSignal<T>, level_sq: f64) -> IqSignal<T> {
    let mut out = x.clone();
    let (i, q) = (x.i(), x.q());
    let mut ni = out.i().to_vec();
    let mut nq = out.q().to_vec();
    for n in 0..x.len() {
        let m = (i[n] * i[n] + q[n] * q[n]).to_f64_lossy();
        if m > level_sq {
            let k = T::from_f64_lossy((level_sq / m).sqrt());
            ni[n] = i[n] * k;
            nq[n] = q[n] * k;
        }
    }
    out.i_mut().copy_from_slice(&ni);
    out.q_mut().copy_from_slice(&nq);
    out
}

/// Largest clip level `a = A^2` with `a <= beta * mean(min(|x|^2, a))`, i.e. the limit
/// of repeatedly clipping at `sqrt(beta * power)`.
fn fixed_point_level(mags: &[f64], beta: f64) -> f64 {
    let mut u = mags.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len();
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + u[k];
    }
    // Segment k: a in [u[k-1], u[k]], samples k.. are clipped.
    for k in (0..n).rev() {
        let lo = if k == 0 { 0.0 } else { u[k - 1] };
        let hi = u[k];
        let denom = n as f64 - beta * (n - k) as f64;
        if denom > 0.0 {
            let a = beta * prefix[k] / denom;
            if a >= lo && a <= hi {
                return a;
            }
        }
    }
    0.0
}

/// Phase-preserving amplitude clip at `A_max = sqrt(beta * power)`, repeated until the
/// PAPR limit holds.
///
/// Clipping lowers the power and therefore `A_max`; after [`MAX_CLIP_ROUNDS`] passes
/// the exact limit level of that iteration is applied directly.
pub fn papr_clip<T: Scalar>(delta: &IqSignal<T>, beta: f64) -> Result<(IqSignal<T>, ClipReport)> {
    if !(beta >= 1.0) {
        return Err(invalid(format!("PAPR limit {beta} must be >= 1")));
    }
    if papr(delta)? <= beta {
        return Ok((
            delta.clone(),
            ClipReport {
                rounds: 0,
                closed_form: false,
            },
        ));
    }
    // Aim slightly inside the limit so rescaling round-off cannot push past it.
    let target = beta * (1.0 + PAPR_TOLERANCE / 10.0);
    let mut x = delta.clone();
    for round in 1..=MAX_CLIP_ROUNDS {
        let level = beta * power(&x)?;
        x = clip_to(&x, level);
        if x.is_zero() {
            break;
        }
        if papr(&x)? <= target {
            return Ok((
                x,
                ClipReport {
                    rounds: round,
                    closed_form: false,
                },
            ));
        }
    }
    let mags: Vec<f64> = delta.magnitudes_sq().map(|v| v.to_f64_lossy()).collect();
    let level = fixed_point_level(&mags, beta);
    if level <= 0.0 {
        return Err(Error::UndefinedInput(format!(
            "PAPR limit {beta} is only met by the zero signal"
        )));
    }
    let x = clip_to(delta, level);
    Ok((
        x,
        ClipReport {
            rounds: MAX_CLIP_ROUNDS + 1,
            closed_form: true,
        },
    ))
}

/// Scales to unit power.
pub fn power_normalize<T: Scalar>(delta: &IqSignal<T>) -> Result<IqSignal<T>> {
    let p = power(delta)?;
    if p == 0.0 {
        return Err(Error::UndefinedInput("cannot normalize an all-zero signal".into()));
    }
    Ok(delta.scaled(T::from_f64_lossy(1.0 / p.sqrt())))
}

/// `sqrt(epsilon) * delta_unit`; the input must already have unit power.
pub fn scale_to_power<T: Scalar>(delta_unit: &IqSignal<T>, epsilon: f64) -> Result<IqSignal<T>> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid(format!("power limit {epsilon} must be positive")));
    }
    let p = power(delta_unit)?;
    if (p - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("expected a unit-power perturbation, got power {p}")));
    }
    Ok(delta_unit.scaled(T::from_f64_lossy(epsilon.sqrt())))
}
