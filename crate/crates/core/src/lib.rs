//! Two-branch multispectral/SAR land-cover segmentation: the network, a
//! synthetic bimodal data pipeline, losses, metrics and experiment drivers.

pub mod ablation;
pub mod config;
pub mod counter;
pub mod data;
pub mod gradcheck;
mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::{Ablation, NetConfig, SplitRatio, StageConfig};
pub use error::{Error, Result};
pub use loss::{FocalConfig, LossKind};
pub use metrics::{ConfusionMatrix, Metrics};
pub use model::{DualSegNet, NetOutput};
