//! Synthetic bimodal patches, the on-disk formats and batching.

pub mod dataset;
pub mod format;
pub mod scene;

pub use dataset::{synthesize, write_dataset, Batch, Dataset, SynthConfig, SynthOutcome, Transform};
pub use format::{read_labels, read_manifest, read_patch, write_labels, write_manifest, write_patch, LabelFile};
pub use scene::{composite_sar, generate_scene, PatchSample, SarTimeSeries, Scene};
