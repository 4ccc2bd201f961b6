//! Per-stage fusion of the two branch maps and the hand-off to the next stage.

use dualseg_tensor::{Element, Tensor, TensorError};

use super::embed::PatchEmbed;
use super::nn::{Linear, ParamBuilder};
use crate::error::Result;

/// Squeeze-excitation style gate: `C -> max(1, C/r) -> GELU -> out -> sigmoid`.
#[derive(Debug, Clone)]
pub struct GateMlp<T: Element> {
    pub squeeze: Linear<T>,
    pub expand: Linear<T>,
}

impl<T: Element> GateMlp<T> {
    fn new(pb: &mut ParamBuilder<T>, name: &str, c: usize, reduction: usize, out: usize) -> Result<Self> {
        let hidden = gate_hidden(c, reduction);
        pb.scope(name, |pb| {
            Ok(GateMlp {
                squeeze: Linear::new(pb, "squeeze", c, hidden)?,
                expand: Linear::new(pb, "expand", hidden, out)?,
            })
        })
    }

    /// `[b, C]` to gates `[b, out]` in (0, 1).
    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.expand.forward(&self.squeeze.forward(z)?.gelu())?.sigmoid())
    }
}

pub fn gate_hidden(c: usize, reduction: usize) -> usize {
    (c / reduction).max(1)
}

/// Gated aggregation of the spectral and SAR maps.
#[derive(Debug, Clone)]
pub struct Mmam<T: Element> {
    pub gate_spec: GateMlp<T>,
    pub gate_sar: GateMlp<T>,
}

impl<T: Element> Mmam<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, cs: usize, ca: usize, reduction: usize) -> Result<Self> {
        let c = cs + ca;
        pb.scope(name, |pb| {
            Ok(Mmam {
                gate_spec: GateMlp::new(pb, "gate_spec", c, reduction, cs)?,
                gate_sar: GateMlp::new(pb, "gate_sar", c, reduction, ca)?,
            })
        })
    }

    /// `concat(M1 * spec, M2 * sar)` with per-channel gates from the pooled concatenation.
    pub fn forward(&self, spec: &Tensor<T>, sar: &Tensor<T>) -> Result<Tensor<T>> {
        check_maps(spec, sar)?;
        let (b, cs, ca) = (spec.shape()[0], spec.shape()[1], sar.shape()[1]);
        let f = Tensor::concat(&[spec.clone(), sar.clone()], 1)?;
        let z = f.mean_axes(&[2, 3], false)?;
        let m1 = self.gate_spec.forward(&z)?.reshape(&[b, cs, 1, 1])?;
        let m2 = self.gate_sar.forward(&z)?.reshape(&[b, ca, 1, 1])?;
        Ok(Tensor::concat(&[spec.mul(&m1)?, sar.mul(&m2)?], 1)?)
    }

    pub fn param_count(cs: usize, ca: usize, reduction: usize) -> u64 {
        let c = cs + ca;
        let h = gate_hidden(c, reduction);
        2 * Linear::<T>::param_count(c, h) + Linear::<T>::param_count(h, cs) + Linear::<T>::param_count(h, ca)
    }
}

fn check_maps<T: Element>(spec: &Tensor<T>, sar: &Tensor<T>) -> Result<()> {
    let (s, a) = (spec.shape(), sar.shape());
    if s.len() != 4 || a.len() != 4 || s[0] != a[0] || s[2..] != a[2..] {
        return Err(TensorError::Shape {
            op: "fuse",
            lhs: s.to_vec(),
            rhs: a.to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Fusion used by a stage: gated, or plain concatenation when ablated.
#[derive(Debug, Clone)]
pub enum Fusion<T: Element> {
    Gated(Mmam<T>),
    Concat,
}

impl<T: Element> Fusion<T> {
    pub fn forward(&self, spec: &Tensor<T>, sar: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Fusion::Gated(m) => m.forward(spec, sar),
            Fusion::Concat => {
                check_maps(spec, sar)?;
                Ok(Tensor::concat(&[spec.clone(), sar.clone()], 1)?)
            }
        }
    }
}

/// Merges the fused map of the previous stage and splits the resulting
/// tokens into the next stage's spectral and SAR branches.
pub fn stage_transition<T: Element>(
    merge: &PatchEmbed<T>,
    fused: &Tensor<T>,
    widths: (usize, usize),
) -> Result<(Tensor<T>, Tensor<T>, usize, usize)> {
    let (tokens, h, w) = merge.forward(fused)?;
    let mut parts = tokens.split(&[widths.0, widths.1], 2)?.into_iter();
    let spec = parts.next().expect("two parts");
    let sar = parts.next().expect("two parts");
    Ok((spec, sar, h, w))
}
