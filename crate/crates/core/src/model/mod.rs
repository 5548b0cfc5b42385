//! The T-stage alignment-fusion unfolding network.

mod config;
mod network;

pub use config::{ModelConfig, Paradigm, Variant};
pub use network::{pad_to_multiple, AfmStage, Afunet, StageState};
