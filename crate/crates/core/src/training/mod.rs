//! Joint training: AdamW, step decay, clipping, checkpoints and the run protocol.

pub mod checkpoint;
pub mod optimizer;
pub mod scheduler;
pub mod trainer;

pub use checkpoint::{load_params, save_params, Checkpoint, CheckpointConfig, ManifestEntry, ParamManifest};
pub use optimizer::{clip_global_norm, trainable_grad_norm, AdamW, AdamWConfig};
pub use scheduler::StepLr;
pub use trainer::{train_run, EpochRecord, MeanLosses, StepLosses, TrainOutcome, Trainer};
