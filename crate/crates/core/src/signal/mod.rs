//! Transmitter chain, AWGN channel, classical baseline receiver and datasets.

pub mod bits;
pub mod channel;
pub mod classical;
pub mod dataset;
pub mod hamming;
pub mod iq;
pub mod modem;

pub use bits::{generate_bits, BitStream};
pub use channel::{apply_channel, noise_variance_from_ebn0, ChannelConfig};
pub use classical::classical_receiver;
pub use dataset::{generate_dataset, load_dataset, read_dataset, save_dataset, write_dataset, LabeledSample};
pub use hamming::{hamming74_decode, hamming74_encode, CODED_BITS, INFO_BITS};
pub use iq::IqSignal;
pub use modem::{bpsk_modulate, pulse_shape, raised_cosine, transmit, FRAME_SAMPLES, SAMPLES_PER_SYMBOL};
