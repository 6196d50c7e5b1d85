//! Simulation of adversarial attacks on a neural baseband receiver.
//!
//! Frames of 32 information bits are Hamming(7,4) coded, BPSK mapped, raised-cosine
//! shaped (8 samples per symbol, 448 samples per frame) and sent over AWGN. A small
//! neural receiver with 32 two-way heads recovers the bits, and the attacks in
//! [`attack`] and [`uap`] perturb its input under power and PAPR limits.
//!
//! All numerics are generic over [`Scalar`]; the aliases below fix the working
//! precision used by the CLI.

// Range checks are written as `!(x > lo)` so that NaN is rejected along with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod signal;
pub mod uap;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Signal = signal::IqSignal<f32>;
pub type Sample = signal::LabeledSample<f32>;
pub type Receiver = nn::ReceiverModel<f32>;
pub type Signal64 = signal::IqSignal<f64>;
pub type Receiver64 = nn::ReceiverModel<f64>;
