//! Training loop, checkpoints, run ledger, inference and ablation sweeps.

pub mod ablate;
pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod ledger;
pub mod schedule;
mod trainer;

pub use ablate::{run_ablation, AblationReport, AblationRow, Sweep};
pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointMeta, RngState, FORMAT_TAG};
pub use config::{DataConfig, Datasets, OptimConfig, Profile, RunConfig, SyntheticData};
pub use infer::{evaluate, GroundTruthEcho, ReferenceEcho, Reconstructor};
pub use ledger::{LedgerEntry, RunLedger};
pub use schedule::CosineSchedule;
pub use trainer::{EpochSummary, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, LEDGER_FILE};
