//! Synthetic task-fMRI-like signals: hemodynamic response, task regressors,
//! mixing with drift and noise, z-scoring, `.fmts` files and per-epoch
//! sharding across workers.

mod dataset;
mod design;
mod partition;
mod synth;

pub use dataset::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, DatasetHeader, DATASET_HEADER_LEN,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use design::{design_regressors, hrf, EventTiming, TaskDesign, HRF_SUPPORT_SECS};
pub use partition::{partition, Shard};
pub use synth::{
    generate_dataset, normalize, normalize_batch, GeneratedData, Normalized, NormalizedBatch,
    SignalBatch, SyntheticConfig,
};
