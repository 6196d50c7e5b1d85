//! Differentiable multi-head receiver, its training loop and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint};
pub use layers::{Conv1d, Dense, Layer};
pub use model::{build_receiver, Architecture, ReceiverModel};
pub use tensor::RealTensor;
pub use train::{train, TrainConfig, TrainHistory};
