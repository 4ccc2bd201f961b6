//! Overlapping patch embedding: a strided convolution followed by a layer
//! norm over channels, producing a token sequence.

use dualseg_tensor::{Conv2dSpec, Element, Tensor};

use super::nn::{map_to_tokens, Conv2d, LayerNorm, ParamBuilder};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct PatchEmbed<T: Element> {
    pub conv: Conv2d<T>,
    pub norm: LayerNorm<T>,
    pub kernel: usize,
}

/// Kernel, stride and padding of the embedding in front of stage `stage` (0-based).
pub fn embed_geometry(stage: usize) -> (usize, usize, usize) {
    if stage == 0 {
        (7, 4, 3)
    } else {
        (3, 2, 1)
    }
}

impl<T: Element> PatchEmbed<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, c_in: usize, c_out: usize, stage: usize) -> Result<Self> {
        let (k, stride, padding) = embed_geometry(stage);
        let spec = Conv2dSpec {
            stride,
            padding,
            groups: 1,
        };
        pb.scope(name, |pb| {
            Ok(PatchEmbed {
                conv: Conv2d::new(pb, "conv", c_in, c_out, k, spec)?,
                norm: LayerNorm::new(pb, "norm", c_out)?,
                kernel: k,
            })
        })
    }

    /// `[b, c, h, w]` to normalized tokens `[b, h'*w', C']` plus `(h', w')`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, usize, usize)> {
        let y = self.conv.forward(x)?;
        let (h, w) = (y.shape()[2], y.shape()[3]);
        Ok((self.norm.forward(&map_to_tokens(&y)?)?, h, w))
    }

    pub fn param_count(c_in: usize, c_out: usize, stage: usize) -> u64 {
        let (k, _, _) = embed_geometry(stage);
        Conv2d::<T>::param_count(c_in, c_out, k, 1) + LayerNorm::<T>::param_count(c_out)
    }
}
