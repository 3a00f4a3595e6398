//! The anomaly-aware forecaster and its training loop.

mod aa;
mod attention;
mod checkpoint;
mod critical;
mod train;

pub use aa::{AAModel, ForwardCache, ModelConfig};
pub use attention::{aa_layer, attention_over, attention_weights, combine, AttentionParams};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use critical::{critical_set, CriticalSet, HiddenBank};
pub use train::{train, EpochRecord, Preset, TrainConfig, TrainOutcome};
