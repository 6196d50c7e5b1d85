use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::model::ReceiverModel;
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::scalar::Scalar;
use crate::signal::LabeledSample;

/// Samples per gradient work unit. Fixed so the summation order (and hence the
/// trained parameters) does not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 8,
            initial_lr: 0.001,
            lr_decay: 0.1,
            lr_decay_every: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.lr_decay_every == 0 {
            return Err(invalid("batch size, epochs and decay interval must be positive"));
        }
        if !(self.initial_lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(invalid("learning rate and decay factor must be positive"));
        }
        Ok(())
    }

    /// Learning rate used during zero-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.initial_lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean per-sample loss over each epoch (as seen during the epoch's updates).
    pub epoch_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

/// Plain minibatch SGD on the mean summed cross-entropy.
pub fn train<T: Scalar>(
    mut model: ReceiverModel<T>,
    dataset: &[LabeledSample<T>],
    cfg: &TrainConfig,
) -> Result<(ReceiverModel<T>, TrainHistory)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut stream_rng(derive_seed(cfg.seed, "shuffle"), epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (grads, loss) = batch_gradient(&model, dataset, batch)?;
            epoch_loss += loss;
            let step = T::from_f64_lossy(-lr / batch.len() as f64);
            for (p, g) in model.params_mut().into_iter().zip(grads.params()) {
                p.axpy(step, g);
            }
        }
        let mean = epoch_loss / dataset.len() as f64;
        log::info!("epoch {} lr {lr:.2e} mean loss {mean:.4}", epoch + 1);
        history.epoch_loss.push(mean);
        history.learning_rate.push(lr);
    }
    Ok((model, history))
}

/// Summed parameter gradient and summed loss over the given sample indices.
fn batch_gradient<T: Scalar>(
    model: &ReceiverModel<T>,
    dataset: &[LabeledSample<T>],
    batch: &[usize],
) -> Result<(ReceiverModel<T>, f64)> {
    let partials: Vec<(ReceiverModel<T>, f64)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.zeros_like();
            let mut loss = 0.0;
            for &idx in chunk {
                let s = &dataset[idx];
                loss += model
                    .backprop(&s.signal, &s.info_bits, Some(&mut g), false)?
                    .loss
                    .to_f64_lossy();
            }
            Ok((g, loss))
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let (mut total, mut loss) = iter.next().expect("non-empty batch");
    for (g, l) in iter {
        for (a, b) in total.params_mut().into_iter().zip(g.params()) {
            a.axpy(T::one(), b);
        }
        loss += l;
    }
    Ok((total, loss))
}
