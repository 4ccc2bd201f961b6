//! Feed-forward block with a depth-wise 3x3 convolution between its two
//! projections. The zero padding of that convolution is the only source of
//! positional information in the network.

use dualseg_tensor::{Conv2dSpec, Element, Tensor, TensorError};

use super::nn::{map_to_tokens, tokens_to_map, Conv2d, LayerNorm, Linear, ParamBuilder};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct MixFfn<T: Element> {
    pub norm: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub dwconv: Conv2d<T>,
    pub fc2: Linear<T>,
}

impl<T: Element> MixFfn<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, channels: usize, mlp_ratio: usize) -> Result<Self> {
        let hidden = channels * mlp_ratio;
        let dw = Conv2dSpec {
            stride: 1,
            padding: 1,
            groups: hidden,
        };
        pb.scope(name, |pb| {
            Ok(MixFfn {
                norm: LayerNorm::new(pb, "norm", channels)?,
                fc1: Linear::new(pb, "fc1", channels, hidden)?,
                dwconv: Conv2d::new(pb, "dwconv", hidden, hidden, 3, dw)?,
                fc2: Linear::new(pb, "fc2", hidden, channels)?,
            })
        })
    }

    /// `x + fc2(gelu(dwconv(fc1(norm(x)))))` on tokens `[b, h*w, C]`.
    pub fn forward(&self, x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        if x.rank() != 3 || x.shape()[1] != h * w {
            return Err(TensorError::Dimension {
                op: "mix_ffn",
                msg: format!("{:?} is not a token map of {h}x{w}", x.shape()),
            }
            .into());
        }
        let hidden = self.fc1.forward(&self.norm.forward(x)?)?;
        let mixed = self.dwconv.forward(&tokens_to_map(&hidden, h, w)?)?;
        let act = map_to_tokens(&mixed)?.gelu();
        Ok(x.add(&self.fc2.forward(&act)?)?)
    }

    pub fn param_count(channels: usize, mlp_ratio: usize) -> u64 {
        let hidden = channels * mlp_ratio;
        LayerNorm::<T>::param_count(channels)
            + Linear::<T>::param_count(channels, hidden)
            + Conv2d::<T>::param_count(hidden, hidden, 3, hidden)
            + Linear::<T>::param_count(hidden, channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_output_projection_is_identity() {
        let mut pb = ParamBuilder::<f64>::new(9);
        let f = MixFfn::new(&mut pb, "ffn", 4, 4).unwrap();
        f.fc2.weight.set_data(vec![0.0; 64]).unwrap();
        let mut rng = dualseg_tensor::SplitMix64::new(1);
        let x = Tensor::<f64>::from_vec(&[2, 9, 4], (0..72).map(|_| rng.normal()).collect()).unwrap();
        assert_eq!(f.forward(&x, 3, 3).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn hidden_width_and_count() {
        let mut pb = ParamBuilder::<f64>::new(0);
        let f = MixFfn::new(&mut pb, "ffn", 8, 4).unwrap();
        assert_eq!(f.fc1.weight.shape(), &[8, 32]);
        assert_eq!(f.dwconv.weight.shape(), &[32, 1, 3, 3]);
        let n: usize = pb.finish().iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(n as u64, MixFfn::<f64>::param_count(8, 4));
        assert_eq!(n, 16 + (8 * 32 + 32) + (32 * 9 + 32) + (32 * 8 + 8));
    }

    #[test]
    fn token_count_must_match_grid() {
        let mut pb = ParamBuilder::<f64>::new(0);
        let f = MixFfn::new(&mut pb, "ffn", 4, 2).unwrap();
        assert!(f.forward(&Tensor::zeros(&[1, 10, 4]), 3, 3).is_err());
    }
}
