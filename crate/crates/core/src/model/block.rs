//! One encoder block of the two-branch backbone: per-branch efficient
//! self-attention, bidirectional cross-attention, then per-branch Mix-FFN.

use dualseg_tensor::{Element, Tensor};

use super::attention::{CrossAttention, EfficientSelfAttention};
use super::mix_ffn::MixFfn;
use super::nn::{LayerNorm, ParamBuilder};
use crate::error::Result;

/// Widths and switches needed to build a block.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub spec_channels: usize,
    pub sar_channels: usize,
    pub heads: usize,
    /// Reduction used by self-attention (1 when efficient attention is off).
    pub self_reduction: usize,
    /// Reduction used by cross-attention.
    pub cross_reduction: usize,
    pub mlp_ratio: usize,
    pub cross_attention: bool,
}

#[derive(Debug, Clone)]
pub struct DualBlock<T: Element> {
    pub spec_norm1: LayerNorm<T>,
    pub spec_attn: EfficientSelfAttention<T>,
    pub sar_norm1: LayerNorm<T>,
    pub sar_attn: EfficientSelfAttention<T>,
    /// SAR injected into the spectral branch.
    pub cross_to_spec: Option<CrossAttention<T>>,
    /// Spectral injected into the SAR branch.
    pub cross_to_sar: Option<CrossAttention<T>>,
    pub spec_ffn: MixFfn<T>,
    pub sar_ffn: MixFfn<T>,
}

impl<T: Element> DualBlock<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, s: BlockSpec) -> Result<Self> {
        let (cs, ca) = (s.spec_channels, s.sar_channels);
        pb.scope(name, |pb| {
            let spec_norm1 = LayerNorm::new(pb, "spec_norm1", cs)?;
            let spec_attn = EfficientSelfAttention::new(pb, "spec_attn", cs, s.heads, s.self_reduction)?;
            let sar_norm1 = LayerNorm::new(pb, "sar_norm1", ca)?;
            let sar_attn = EfficientSelfAttention::new(pb, "sar_attn", ca, s.heads, s.self_reduction)?;
            let (cross_to_spec, cross_to_sar) = if s.cross_attention {
                (
                    Some(CrossAttention::new(pb, "cross_to_spec", cs, ca, s.heads, s.cross_reduction)?),
                    Some(CrossAttention::new(pb, "cross_to_sar", ca, cs, s.heads, s.cross_reduction)?),
                )
            } else {
                (None, None)
            };
            Ok(DualBlock {
                spec_norm1,
                spec_attn,
                sar_norm1,
                sar_attn,
                cross_to_spec,
                cross_to_sar,
                spec_ffn: MixFfn::new(pb, "spec_ffn", cs, s.mlp_ratio)?,
                sar_ffn: MixFfn::new(pb, "sar_ffn", ca, s.mlp_ratio)?,
            })
        })
    }

    /// Tokens `[b, h*w, C_spec]` and `[b, h*w, C_sar]` in, same shapes out.
    pub fn forward(&self, spec: &Tensor<T>, sar: &Tensor<T>, h: usize, w: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let spec = spec.add(&self.spec_attn.forward(&self.spec_norm1.forward(spec)?)?)?;
        let sar = sar.add(&self.sar_attn.forward(&self.sar_norm1.forward(sar)?)?)?;
        // both directions read the post-self-attention features
        let (spec, sar) = match (&self.cross_to_spec, &self.cross_to_sar) {
            (Some(to_spec), Some(to_sar)) => (to_spec.forward(&spec, &sar)?, to_sar.forward(&sar, &spec)?),
            _ => (spec, sar),
        };
        Ok((self.spec_ffn.forward(&spec, h, w)?, self.sar_ffn.forward(&sar, h, w)?))
    }
}
