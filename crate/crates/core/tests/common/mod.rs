#![allow(dead_code)]

use air_core::nn::{Architecture, Conv1d, Dense, Layer, ReceiverModel};
use air_core::rng::stream_rng;
use air_core::signal::{generate_bits, generate_dataset, BitStream, LabeledSample, INFO_BITS};

/// A receiver of a few thousand parameters touching every layer kind.
pub fn tiny_model(seed: u64) -> ReceiverModel<f64> {
    let layers = vec![
        Layer::Conv1d(Conv1d::new(2, 4, 8, 4, 2)),
        Layer::Silu,
        Layer::AvgPool1d(2),
        Layer::Residual(vec![
            Layer::Conv1d(Conv1d::new(4, 4, 3, 1, 1)),
            Layer::Silu,
            Layer::Conv1d(Conv1d::new(4, 4, 3, 1, 1)),
        ]),
        Layer::Silu,
        Layer::Dense(Dense::new(4 * 56, 16)),
        Layer::Silu,
        Layer::Dense(Dense::new(16, 2 * INFO_BITS)),
    ];
    let mut m = ReceiverModel::from_layers(Architecture::Custom, INFO_BITS, 448, layers).unwrap();
    m.init(seed);
    m
}

pub fn noisy_samples(count: usize, ebn0_db: f64, seed: u64) -> Vec<LabeledSample<f64>> {
    generate_dataset::<f64>(&[ebn0_db], count, seed).unwrap()
}

pub fn random_labels(seed: u64) -> BitStream {
    generate_bits(INFO_BITS, &mut stream_rng(seed, 0)).unwrap()
}
