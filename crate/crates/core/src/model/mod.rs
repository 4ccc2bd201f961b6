//! Network layers, built generically over the scalar type so the same code
//! trains in `f32` and is gradient-checked in `f64`.

pub mod attention;
pub mod block;
pub mod decoder;
pub mod embed;
pub mod fusion;
pub mod mix_ffn;
pub mod net;
pub mod nn;

pub use decoder::{logits_to_labels, FeaturePyramid, LabelMaps};
pub use net::{DualSegNet, NetOutput};
