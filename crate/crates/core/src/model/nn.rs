//! Parameter registry and the basic layers everything else is built from.

use dualseg_tensor::rng::{const_param, normal_param, trunc_normal_param};
use dualseg_tensor::{Conv2dSpec, Element, SplitMix64, Tensor};

use crate::config::LN_EPS;
use crate::error::Result;

/// Creates parameters in a fixed order from one seeded generator and keeps
/// them under dotted hierarchical names.
pub struct ParamBuilder<T: Element> {
    rng: SplitMix64,
    prefix: Vec<String>,
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Element> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            rng: SplitMix64::new(seed),
            prefix: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.prefix.push(name.to_owned());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn register(&mut self, name: &str, t: Tensor<T>) -> Tensor<T> {
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.params.push((full, t.clone()));
        t
    }

    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor<T>> {
        let t = trunc_normal_param(&mut self.rng, shape, std)?;
        Ok(self.register(name, t))
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor<T>> {
        let t = normal_param(&mut self.rng, shape, std)?;
        Ok(self.register(name, t))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor<T>> {
        let t = const_param(shape, value)?;
        Ok(self.register(name, t))
    }

    pub fn finish(self) -> Vec<(String, Tensor<T>)> {
        self.params
    }
}

/// `y = x W + b` over the trailing axis; `W` is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        pb.scope(name, |pb| {
            Ok(Linear {
                weight: pb.trunc_normal("weight", &[d_in, d_out], 0.02)?,
                bias: pb.constant("bias", &[d_out], 0.0)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.matmul(&self.weight)?.add(&self.bias)?)
    }

    pub fn param_count(d_in: usize, d_out: usize) -> u64 {
        (d_in * d_out + d_out) as u64
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, d: usize) -> Result<Self> {
        pb.scope(name, |pb| {
            Ok(LayerNorm {
                gamma: pb.constant("gamma", &[d], 1.0)?,
                beta: pb.constant("beta", &[d], 0.0)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.layer_norm(&self.gamma, &self.beta, LN_EPS)?)
    }

    pub fn param_count(d: usize) -> u64 {
        2 * d as u64
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub spec: Conv2dSpec,
}

impl<T: Element> Conv2d<T> {
    /// Square `k x k` kernel, weights drawn with std `sqrt(2 / fan_out)`.
    pub fn new(
        pb: &mut ParamBuilder<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        spec: Conv2dSpec,
    ) -> Result<Self> {
        let fan_out = (k * k * c_out / spec.groups) as f64;
        pb.scope(name, |pb| {
            Ok(Conv2d {
                weight: pb.normal("weight", &[c_out, c_in / spec.groups, k, k], (2.0 / fan_out).sqrt())?,
                bias: pb.constant("bias", &[c_out], 0.0)?,
                spec,
            })
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.conv2d(&self.weight, Some(&self.bias), self.spec)?)
    }

    pub fn param_count(c_in: usize, c_out: usize, k: usize, groups: usize) -> u64 {
        (c_out * (c_in / groups) * k * k + c_out) as u64
    }
}

/// `[b, C, h, w]` to `[b, h*w, C]`.
pub fn map_to_tokens<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let (b, c, n) = (s[0], s[1], s[2] * s[3]);
    Ok(x.reshape(&[b, c, n])?.permute(&[0, 2, 1])?)
}

/// `[b, h*w, C]` to `[b, C, h, w]`.
pub fn tokens_to_map<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let (b, c) = (s[0], s[2]);
    Ok(x.permute(&[0, 2, 1])?.reshape(&[b, c, h, w])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_counts() {
        let mut pb = ParamBuilder::<f64>::new(0);
        let lin = pb.scope("head", |pb| Linear::new(pb, "fc", 10, 5)).unwrap();
        let conv = Conv2d::new(&mut pb, "stem", 12, 48, 7, Conv2dSpec { stride: 4, padding: 3, groups: 1 }).unwrap();
        let params = pb.finish();
        let names: Vec<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["head.fc.weight", "head.fc.bias", "stem.weight", "stem.bias"]);
        assert_eq!(lin.weight.numel() + lin.bias.numel(), 55);
        assert_eq!(Linear::<f64>::param_count(10, 5), 55);
        assert_eq!((conv.weight.numel() + conv.bias.numel()) as u64, 28_272);
        assert_eq!(Conv2d::<f64>::param_count(12, 48, 7, 1), 28_272);
    }

    #[test]
    fn token_map_round_trip() {
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(f64::from).collect();
        let x = Tensor::<f64>::from_vec(&[2, 3, 2, 2], data.clone()).unwrap();
        let t = map_to_tokens(&x).unwrap();
        assert_eq!(t.shape(), &[2, 4, 3]);
        assert_eq!(t.to_vec()[..3], [0.0, 4.0, 8.0]);
        assert_eq!(tokens_to_map(&t, 2, 2).unwrap().to_vec(), data);
    }

    #[test]
    fn same_seed_same_params() {
        let build = || {
            let mut pb = ParamBuilder::<f32>::new(5);
            Linear::new(&mut pb, "a", 4, 4).unwrap();
            pb.finish()[0].1.to_vec()
        };
        assert_eq!(build(), build());
    }
}
