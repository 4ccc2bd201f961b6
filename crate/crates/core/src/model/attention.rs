//! Multi-head attention with key/value sequence reduction, in self and
//! cross-modal form.

use dualseg_tensor::{Element, Tensor};

use super::nn::{LayerNorm, Linear, ParamBuilder};
use crate::error::{Error, Result};

/// Scaled dot-product attention over `heads` heads.
/// `q: [b, N, C]`, `k, v: [b, M, C]` -> `[b, N, C]`.
pub fn multi_head_attention<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let (b, n, c) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let m = k.shape()[1];
    let dh = c / heads;
    let q4 = q.reshape(&[b, n, heads, dh])?.permute(&[0, 2, 1, 3])?;
    let kt = k.reshape(&[b, m, heads, dh])?.permute(&[0, 2, 3, 1])?;
    let v4 = v.reshape(&[b, m, heads, dh])?.permute(&[0, 2, 1, 3])?;
    let scores = q4.matmul(&kt)?.mul_scalar(1.0 / (dh as f64).sqrt());
    let weights = scores.softmax(3)?;
    let out = weights.matmul(&v4)?.permute(&[0, 2, 1, 3])?;
    Ok(out.reshape(&[b, n, c])?)
}

/// Shortens a token sequence by `ratio`: groups of `ratio` consecutive tokens
/// are concatenated (`[b, N/R, C*R]`), projected back to `C` and normalized.
/// This is a stride-`R` convolution with kernel `R` along the sequence.
#[derive(Debug, Clone)]
pub struct SequenceReduction<T: Element> {
    pub ratio: usize,
    pub proj: Linear<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Element> SequenceReduction<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, channels: usize, ratio: usize) -> Result<Self> {
        pb.scope(name, |pb| {
            Ok(SequenceReduction {
                ratio,
                proj: Linear::new(pb, "proj", channels * ratio, channels)?,
                norm: LayerNorm::new(pb, "norm", channels)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if n % self.ratio != 0 {
            return Err(Error::Config(format!(
                "{n} tokens not divisible by reduction ratio {}",
                self.ratio
            )));
        }
        let grouped = x.reshape(&[b, n / self.ratio, c * self.ratio])?;
        self.norm.forward(&self.proj.forward(&grouped)?)
    }

    pub fn param_count(channels: usize, ratio: usize) -> u64 {
        Linear::<T>::param_count(channels * ratio, channels) + LayerNorm::<T>::param_count(channels)
    }
}

/// Self-attention whose keys and values come from a reduced sequence.
/// The block applies the pre-norm and residual around it.
#[derive(Debug, Clone)]
pub struct EfficientSelfAttention<T: Element> {
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub proj: Linear<T>,
    /// Absent when the ratio is 1.
    pub reduction: Option<SequenceReduction<T>>,
}

impl<T: Element> EfficientSelfAttention<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, channels: usize, heads: usize, ratio: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide {channels} channels")));
        }
        pb.scope(name, |pb| {
            Ok(EfficientSelfAttention {
                heads,
                q: Linear::new(pb, "q", channels, channels)?,
                k: Linear::new(pb, "k", channels, channels)?,
                v: Linear::new(pb, "v", channels, channels)?,
                proj: Linear::new(pb, "proj", channels, channels)?,
                reduction: if ratio > 1 {
                    Some(SequenceReduction::new(pb, "sr", channels, ratio)?)
                } else {
                    None
                },
            })
        })
    }

    pub fn ratio(&self) -> usize {
        self.reduction.as_ref().map_or(1, |r| r.ratio)
    }

    /// Keys/values source after reduction.
    pub fn reduced(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.reduction {
            Some(r) => r.forward(x),
            None => Ok(x.clone()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let kv = self.reduced(x)?;
        let q = self.q.forward(x)?;
        let k = self.k.forward(&kv)?;
        let v = self.v.forward(&kv)?;
        self.proj.forward(&multi_head_attention(&q, &k, &v, self.heads)?)
    }

    pub fn param_count(channels: usize, ratio: usize) -> u64 {
        let sr = if ratio > 1 {
            SequenceReduction::<T>::param_count(channels, ratio)
        } else {
            0
        };
        4 * Linear::<T>::param_count(channels, channels) + sr
    }
}

/// Injects an auxiliary modality into a primary one:
/// `primary + Attention(norm(primary), reduce(adjust(auxiliary)))`.
#[derive(Debug, Clone)]
pub struct CrossAttention<T: Element> {
    pub heads: usize,
    pub norm: LayerNorm<T>,
    /// Maps auxiliary width to primary width.
    pub adjust: Linear<T>,
    pub reduction: Option<SequenceReduction<T>>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub proj: Linear<T>,
}

impl<T: Element> CrossAttention<T> {
    pub fn new(
        pb: &mut ParamBuilder<T>,
        name: &str,
        primary: usize,
        auxiliary: usize,
        heads: usize,
        ratio: usize,
    ) -> Result<Self> {
        if heads == 0 || !primary.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide {primary} channels")));
        }
        pb.scope(name, |pb| {
            Ok(CrossAttention {
                heads,
                norm: LayerNorm::new(pb, "norm", primary)?,
                adjust: Linear::new(pb, "adjust", auxiliary, primary)?,
                reduction: if ratio > 1 {
                    Some(SequenceReduction::new(pb, "sr", primary, ratio)?)
                } else {
                    None
                },
                q: Linear::new(pb, "q", primary, primary)?,
                k: Linear::new(pb, "k", primary, primary)?,
                v: Linear::new(pb, "v", primary, primary)?,
                proj: Linear::new(pb, "proj", primary, primary)?,
            })
        })
    }

    pub fn forward(&self, primary: &Tensor<T>, auxiliary: &Tensor<T>) -> Result<Tensor<T>> {
        let (ps, as_) = (primary.shape(), auxiliary.shape());
        if ps[0] != as_[0] || ps[1] != as_[1] {
            return Err(dualseg_tensor::TensorError::Shape {
                op: "cross_attention",
                lhs: ps.to_vec(),
                rhs: as_.to_vec(),
            }
            .into());
        }
        let aux = self.adjust.forward(auxiliary)?;
        let kv = match &self.reduction {
            Some(r) => r.forward(&aux)?,
            None => aux,
        };
        let q = self.q.forward(&self.norm.forward(primary)?)?;
        let k = self.k.forward(&kv)?;
        let v = self.v.forward(&kv)?;
        let attn = self.proj.forward(&multi_head_attention(&q, &k, &v, self.heads)?)?;
        Ok(primary.add(&attn)?)
    }

    pub fn param_count(primary: usize, auxiliary: usize, ratio: usize) -> u64 {
        let sr = if ratio > 1 {
            SequenceReduction::<T>::param_count(primary, ratio)
        } else {
            0
        };
        LayerNorm::<T>::param_count(primary)
            + Linear::<T>::param_count(auxiliary, primary)
            + sr
            + 4 * Linear::<T>::param_count(primary, primary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomize(params: &[(String, Tensor<f64>)], seed: u64) {
        let mut rng = dualseg_tensor::SplitMix64::new(seed);
        for (_, p) in params {
            p.set_data((0..p.numel()).map(|_| rng.normal() * 0.5).collect()).unwrap();
        }
    }

    #[test]
    fn reduced_sequence_length() {
        let mut pb = ParamBuilder::<f64>::new(1);
        let sa = EfficientSelfAttention::new(&mut pb, "sa", 8, 2, 4).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 4096, 8]);
        assert_eq!(sa.reduced(&x).unwrap().shape(), &[1, 1024, 8]);
        let x = Tensor::<f64>::zeros(&[2, 30, 8]);
        assert!(sa.forward(&x).is_err());
    }

    #[test]
    fn single_token_returns_value_projection() {
        let mut pb = ParamBuilder::<f64>::new(2);
        let sa = EfficientSelfAttention::new(&mut pb, "sa", 4, 2, 1).unwrap();
        randomize(&pb.finish(), 3);
        let x = Tensor::<f64>::from_vec(&[1, 1, 4], vec![0.3, -1.0, 0.8, 0.1]).unwrap();
        let got = sa.forward(&x).unwrap().to_vec();
        let want = sa.proj.forward(&sa.v.forward(&x).unwrap()).unwrap().to_vec();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn zeroed_value_projection_is_identity() {
        let mut pb = ParamBuilder::<f64>::new(4);
        let ca = CrossAttention::new(&mut pb, "ca", 6, 2, 2, 2).unwrap();
        ca.v.weight.set_data(vec![0.0; 36]).unwrap();
        let mut rng = dualseg_tensor::SplitMix64::new(0);
        let p = Tensor::<f64>::from_vec(&[2, 4, 6], (0..48).map(|_| rng.normal()).collect()).unwrap();
        let a = Tensor::<f64>::from_vec(&[2, 4, 2], (0..16).map(|_| rng.normal()).collect()).unwrap();
        assert_eq!(ca.forward(&p, &a).unwrap().to_vec(), p.to_vec());
    }

    #[test]
    fn token_mismatch_is_dimension_error() {
        let mut pb = ParamBuilder::<f64>::new(4);
        let ca = CrossAttention::new(&mut pb, "ca", 4, 2, 1, 1).unwrap();
        let p = Tensor::<f64>::zeros(&[1, 4, 4]);
        let a = Tensor::<f64>::zeros(&[1, 5, 2]);
        assert!(ca.forward(&p, &a).is_err());
    }

    #[test]
    fn counts_match_built_modules() {
        let mut pb = ParamBuilder::<f64>::new(0);
        EfficientSelfAttention::new(&mut pb, "a", 12, 3, 4).unwrap();
        let n: usize = pb.finish().iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(n as u64, EfficientSelfAttention::<f64>::param_count(12, 4));
        let mut pb = ParamBuilder::<f64>::new(0);
        CrossAttention::new(&mut pb, "c", 12, 4, 3, 2).unwrap();
        let n: usize = pb.finish().iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(n as u64, CrossAttention::<f64>::param_count(12, 4, 2));
    }
}
