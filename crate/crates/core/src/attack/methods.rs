//! Gradient-sign attacks (FGSM, MI-FGSM, PGD) and the AWGN control.

use rand::Rng;
use rand_distr::StandardNormal;

use super::constraints::{
    db_to_linear, linear_to_db, papr, papr_clip, power, power_normalize, scale_to_power, ClipReport,
};
use crate::error::{invalid, Error, Result};
use crate::nn::ReceiverModel;
use crate::scalar::Scalar;
use crate::signal::{BitStream, IqSignal, LabeledSample};

/// Perturbation limits. `epsilon` is the operative power limit; when `psr_db` is set the
/// evaluation harness derives a per-sample `epsilon` from it before attacking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackBudget {
    pub epsilon: f64,
    /// Linear PAPR limit, >= 1.
    pub beta: f64,
    pub iterations: usize,
    pub psr_db: Option<f64>,
}

impl AttackBudget {
    pub fn new(epsilon: f64, beta: f64, iterations: usize) -> Result<Self> {
        let b = Self {
            epsilon,
            beta,
            iterations,
            psr_db: None,
        };
        b.validate()?;
        Ok(b)
    }

    /// Budget expressed as PSR and PAPR in dB; `epsilon` is a placeholder of the
    /// same ratio relative to a unit-power signal until resolved per sample.
    pub fn from_db(psr_db: f64, papr_db: f64, iterations: usize) -> Result<Self> {
        let b = Self {
            epsilon: db_to_linear(psr_db),
            beta: db_to_linear(papr_db),
            iterations,
            psr_db: Some(psr_db),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(invalid(format!("power limit {} must be positive", self.epsilon)));
        }
        // allow the dB round trip of 0 dB to land a hair under 1
        if !(self.beta >= 1.0 - 1e-12) {
            return Err(invalid(format!("PAPR limit {} must be >= 1", self.beta)));
        }
        if self.iterations == 0 {
            return Err(invalid("iteration count must be >= 1"));
        }
        Ok(())
    }

    pub fn papr_db(&self) -> f64 {
        linear_to_db(self.beta)
    }

    /// Fixes `epsilon` for a sample whose noise-free component has the given power.
    pub fn resolved(&self, clean_power: f64) -> Self {
        match self.psr_db {
            Some(psr) => Self {
                epsilon: db_to_linear(psr) * clean_power,
                ..*self
            },
            None => *self,
        }
    }

    fn beta_limit(&self) -> f64 {
        self.beta.max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult<T> {
    pub adversarial_signal: IqSignal<T>,
    pub perturbation: IqSignal<T>,
    pub achieved_power: f64,
    pub achieved_papr: f64,
    pub iterations_used: usize,
    /// Largest number of clip passes any iteration needed.
    pub clip_rounds: usize,
}

impl<T: Scalar> AttackResult<T> {
    fn finish(
        clean: &IqSignal<T>,
        perturbation: IqSignal<T>,
        iterations_used: usize,
        clip_rounds: usize,
    ) -> Result<Self> {
        Ok(Self {
            adversarial_signal: clean.try_add(&perturbation)?,
            achieved_power: power(&perturbation)?,
            achieved_papr: papr(&perturbation)?,
            perturbation,
            iterations_used,
            clip_rounds,
        })
    }
}

fn sign_stacked<T: Scalar>(grad: &[T]) -> Vec<T> {
    grad.iter().map(|g| g.sign0()).collect()
}

fn gradient<T: Scalar>(model: &ReceiverModel<T>, r: &IqSignal<T>, labels: &BitStream) -> Result<Vec<T>> {
    Ok(model.input_gradient(r, labels)?.into_values())
}

/// PAPR projection of a sign step. A step with too few nonzero entries has no
/// nonzero point within the limit, which is a property of the gradient rather than
/// of the input signal.
fn clip_step<T: Scalar>(raw: &IqSignal<T>, beta: f64) -> Result<(IqSignal<T>, ClipReport)> {
    papr_clip(raw, beta).map_err(|e| match e {
        Error::UndefinedInput(_) => Error::DegenerateGradient,
        other => other,
    })
}

/// Single sign-gradient step scaled to power `epsilon`.
pub fn fgsm_attack<T: Scalar>(
    model: &ReceiverModel<T>,
    sample: &LabeledSample<T>,
    budget: &AttackBudget,
) -> Result<AttackResult<T>> {
    budget.validate()?;
    let grad = gradient(model, &sample.signal, &sample.info_bits)?;
    if grad.iter().all(|g| g.is_zero()) {
        return Err(Error::DegenerateGradient);
    }
    let raw = IqSignal::from_stacked(&sign_stacked(&grad))?;
    // The sign pattern has constant modulus unless a gradient entry is exactly zero;
    // only then can the PAPR limit bind.
    let (raw, rep) = clip_step(&raw, budget.beta_limit())?;
    let delta = scale_to_power(&power_normalize(&raw)?, budget.epsilon)?;
    AttackResult::finish(&sample.signal, delta, 1, rep.rounds)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Accumulate {
    /// Running sum of L1-normalized gradients.
    Momentum,
    /// Fresh gradient at each adversarial point.
    Projected,
}

fn iterative_attack<T: Scalar>(
    model: &ReceiverModel<T>,
    sample: &LabeledSample<T>,
    budget: &AttackBudget,
    mode: Accumulate,
) -> Result<AttackResult<T>> {
    budget.validate()?;
    let n = sample.signal.len();
    let mut momentum = vec![T::zero(); 2 * n];
    // unit-power perturbation after the latest projection
    let mut delta = vec![T::zero(); 2 * n];
    let mut r_adv = sample.signal.clone();
    let mut perturbation = IqSignal::zeros(n);
    let mut clip_rounds = 0;
    let scale = T::from_f64_lossy(budget.epsilon.sqrt());
    for t in 0..budget.iterations {
        let grad = gradient(model, &r_adv, &sample.info_bits)?;
        let l1: T = grad.iter().map(|g| g.abs()).sum();
        if l1.is_zero() && t == 0 {
            return Err(Error::DegenerateGradient);
        }
        let direction = match mode {
            Accumulate::Momentum => {
                if !l1.is_zero() {
                    for (m, &g) in momentum.iter_mut().zip(&grad) {
                        *m += g / l1;
                    }
                }
                sign_stacked(&momentum)
            }
            Accumulate::Projected => sign_stacked(&grad),
        };
        let raw: Vec<T> = direction.iter().zip(&delta).map(|(&s, &d)| s + d).collect();
        let raw = IqSignal::from_stacked(&raw)?;
        if raw.is_zero() {
            return Err(Error::DegenerateGradient);
        }
        let (clipped, rep) = clip_step(&raw, budget.beta_limit())?;
        clip_rounds = clip_rounds.max(rep.rounds);
        let unit = power_normalize(&clipped)?;
        delta = unit.to_stacked();
        perturbation = unit.scaled(scale);
        r_adv = sample.signal.try_add(&perturbation)?;
    }
    AttackResult::finish(&sample.signal, perturbation, budget.iterations, clip_rounds)
}

/// Momentum iterative FGSM.
pub fn mifgsm_attack<T: Scalar>(
    model: &ReceiverModel<T>,
    sample: &LabeledSample<T>,
    budget: &AttackBudget,
) -> Result<AttackResult<T>> {
    iterative_attack(model, sample, budget, Accumulate::Momentum)
}

/// Iterated sign-gradient steps with PAPR/power projection after each step.
pub fn pgd_attack<T: Scalar>(
    model: &ReceiverModel<T>,
    sample: &LabeledSample<T>,
    budget: &AttackBudget,
) -> Result<AttackResult<T>> {
    iterative_attack(model, sample, budget, Accumulate::Projected)
}

/// Complex Gaussian perturbation scaled to power exactly `epsilon`; PAPR unconstrained.
pub fn awgn_attack<T: Scalar, R: Rng + ?Sized>(
    sample: &LabeledSample<T>,
    budget: &AttackBudget,
    rng: &mut R,
) -> Result<AttackResult<T>> {
    budget.validate()?;
    let n = sample.signal.len();
    let mut draw = || -> Vec<T> {
        (0..n)
            .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
            .collect()
    };
    let i = draw();
    let q = draw();
    let noise = IqSignal::new(i, q)?;
    let delta = scale_to_power(&power_normalize(&noise)?, budget.epsilon)?;
    AttackResult::finish(&sample.signal, delta, 1, 0)
}
