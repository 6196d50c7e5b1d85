use num_complex::Complex;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Complex baseband samples stored as separate in-phase and quadrature rails.
#[derive(Clone, Debug, PartialEq)]
pub struct IqSignal<T> {
    i: Vec<T>,
    q: Vec<T>,
}

impl<T: Scalar> IqSignal<T> {
    pub fn new(i: Vec<T>, q: Vec<T>) -> Result<Self> {
        if i.len() != q.len() {
            return Err(invalid(format!("I/Q length mismatch: {} vs {}", i.len(), q.len())));
        }
        if i.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("IQ samples must be finite"));
        }
        Ok(Self { i, q })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            i: vec![T::zero(); n],
            q: vec![T::zero(); n],
        }
    }

    pub fn from_complex(samples: &[Complex<T>]) -> Self {
        Self {
            i: samples.iter().map(|c| c.re).collect(),
            q: samples.iter().map(|c| c.im).collect(),
        }
    }

    /// Builds a signal from the stacked `[I..., Q...]` layout used by the receiver input.
    pub fn from_stacked(stacked: &[T]) -> Result<Self> {
        if !stacked.len().is_multiple_of(2) {
            return Err(invalid("stacked IQ buffer must have even length"));
        }
        let n = stacked.len() / 2;
        Self::new(stacked[..n].to_vec(), stacked[n..].to_vec())
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn i(&self) -> &[T] {
        &self.i
    }

    pub fn q(&self) -> &[T] {
        &self.q
    }

    pub fn i_mut(&mut self) -> &mut [T] {
        &mut self.i
    }

    pub fn q_mut(&mut self) -> &mut [T] {
        &mut self.q
    }

    pub fn sample(&self, n: usize) -> Complex<T> {
        Complex::new(self.i[n], self.q[n])
    }

    pub fn to_complex(&self) -> Vec<Complex<T>> {
        self.i
            .iter()
            .zip(&self.q)
            .map(|(&re, &im)| Complex::new(re, im))
            .collect()
    }

    /// `[I..., Q...]`, i.e. the row-major `(2, N)` tensor fed to the receiver.
    pub fn to_stacked(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(2 * self.len());
        v.extend_from_slice(&self.i);
        v.extend_from_slice(&self.q);
        v
    }

    /// `|x(n)|^2` per sample.
    pub fn magnitudes_sq(&self) -> impl Iterator<Item = T> + '_ {
        self.i.iter().zip(&self.q).map(|(&a, &b)| a * a + b * b)
    }

    pub fn energy(&self) -> T {
        self.magnitudes_sq().sum()
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            i: self.i.iter().map(|&v| v * k).collect(),
            q: self.q.iter().map(|&v| v * k).collect(),
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + k * other`.
    pub fn add_scaled(&self, other: &Self, k: T) -> Result<Self> {
        self.zip_with(other, |a, b| a + k * b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.len() != other.len() {
            return Err(invalid(format!(
                "signal length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self {
            i: self.i.iter().zip(&other.i).map(|(&a, &b)| f(a, b)).collect(),
            q: self.q.iter().zip(&other.q).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            i: self.i.iter().map(|&v| f(v)).collect(),
            q: self.q.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> IqSignal<U> {
        IqSignal {
            i: self.i.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            q: self.q.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.i.iter().chain(self.q.iter()).all(|v| v.is_zero())
    }
}
