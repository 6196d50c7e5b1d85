//! Configuration and commands behind the `air` binary.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_attack, cmd_gen_data, cmd_train, cmd_uap, load_uap, GenSummary, Split, TrainSummary, UapSummary,
};
pub use config::{
    AttackSection, DataSection, ExperimentConfig, ModelSection, Overrides, Scenario, TrainSection, UapSection,
};
