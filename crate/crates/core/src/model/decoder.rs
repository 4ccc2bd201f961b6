//! All-MLP decoder and the conversion of logits to label maps.

use dualseg_tensor::{Element, Tensor, TensorError};

use super::nn::{map_to_tokens, tokens_to_map, Linear, ParamBuilder};
use crate::error::Result;

/// The fused stage maps `F1..F4` at 1/4, 1/8, 1/16 and 1/32 resolution.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T: Element> {
    pub levels: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Decoder<T: Element> {
    pub level_proj: Vec<Linear<T>>,
    pub fuse: Linear<T>,
    pub classifier: Linear<T>,
}

impl<T: Element> Decoder<T> {
    pub fn new(pb: &mut ParamBuilder<T>, name: &str, stage_channels: [usize; 4], c_dec: usize, n_cls: usize) -> Result<Self> {
        pb.scope(name, |pb| {
            let level_proj = stage_channels
                .iter()
                .enumerate()
                .map(|(i, &c)| Linear::new(pb, &format!("proj{}", i + 1), c, c_dec))
                .collect::<Result<Vec<_>>>()?;
            Ok(Decoder {
                level_proj,
                fuse: Linear::new(pb, "fuse", 4 * c_dec, c_dec)?,
                classifier: Linear::new(pb, "classifier", c_dec, n_cls)?,
            })
        })
    }

    /// Logits `[b, N_cls, h1, w1]` at the resolution of the first level.
    pub fn forward(&self, pyramid: &FeaturePyramid<T>) -> Result<Tensor<T>> {
        let lv = &pyramid.levels;
        if lv.len() != 4 || lv.iter().any(|t| t.rank() != 4) {
            return Err(TensorError::Dimension {
                op: "decode",
                msg: format!("expected four [b, C, h, w] maps, got {:?}", lv.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()),
            }
            .into());
        }
        let (h, w) = (lv[0].shape()[2], lv[0].shape()[3]);
        for i in 1..4 {
            let (prev, cur) = (lv[i - 1].shape(), lv[i].shape());
            if cur[0] != prev[0] || cur[2] > prev[2] || cur[3] > prev[3] {
                return Err(TensorError::Dimension {
                    op: "decode",
                    msg: format!("level {} {cur:?} does not follow level {} {prev:?}", i + 1, i),
                }
                .into());
            }
        }
        let mut ups = Vec::with_capacity(4);
        for (t, proj) in lv.iter().zip(&self.level_proj) {
            let (hi, wi) = (t.shape()[2], t.shape()[3]);
            let p = tokens_to_map(&proj.forward(&map_to_tokens(t)?)?, hi, wi)?;
            ups.push(if (hi, wi) == (h, w) { p } else { p.bilinear_upsample(h, w)? });
        }
        let cat = map_to_tokens(&Tensor::concat(&ups, 1)?)?;
        let logits = self.classifier.forward(&self.fuse.forward(&cat)?)?;
        tokens_to_map(&logits, h, w)
    }

    pub fn param_count(stage_channels: [usize; 4], c_dec: usize, n_cls: usize) -> u64 {
        stage_channels.iter().map(|&c| Linear::<T>::param_count(c, c_dec)).sum::<u64>()
            + Linear::<T>::param_count(4 * c_dec, c_dec)
            + Linear::<T>::param_count(c_dec, n_cls)
    }
}

/// Label maps `[b][h*w]` of class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMaps {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMaps {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.labels[i * n..(i + 1) * n]
    }

    /// Nearest-neighbour resize by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> LabelMaps {
        let (h, w) = (self.height * factor, self.width * factor);
        let mut labels = Vec::with_capacity(self.batch * h * w);
        for b in 0..self.batch {
            let src = self.image(b);
            for y in 0..h {
                for x in 0..w {
                    labels.push(src[(y / factor) * self.width + x / factor]);
                }
            }
        }
        LabelMaps {
            batch: self.batch,
            height: h,
            width: w,
            labels,
        }
    }
}

/// Per-pixel argmax of `[b, C, h, w]` logits; ties go to the lowest class.
pub fn logits_to_labels<T: Element>(logits: &Tensor<T>) -> Result<LabelMaps> {
    let s = logits.shape();
    if s.len() != 4 || s[1] == 0 || s[1] > 256 {
        return Err(TensorError::Dimension {
            op: "logits_to_labels",
            msg: format!("expected [b, C, h, w] logits with 1..=256 classes, got {s:?}"),
        }
        .into());
    }
    let (b, c, n) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut labels = Vec::with_capacity(b * n);
    for bi in 0..b {
        let base = bi * c * n;
        for p in 0..n {
            let mut best = 0;
            let mut best_v = d[base + p];
            for k in 1..c {
                let v = d[base + k * n + p];
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            labels.push(best as u8);
        }
    }
    Ok(LabelMaps {
        batch: b,
        height: s[2],
        width: s[3],
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        let l = Tensor::<f64>::from_vec(&[1, 3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        let m = logits_to_labels(&l).unwrap();
        assert_eq!(m.labels, vec![0, 1]);
    }

    #[test]
    fn nearest_upsample() {
        let m = LabelMaps {
            batch: 1,
            height: 1,
            width: 2,
            labels: vec![3, 7],
        };
        let u = m.upsample_nearest(2);
        assert_eq!(u.labels, vec![3, 3, 7, 7, 3, 3, 7, 7]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut pb = ParamBuilder::<f64>::new(0);
        let d = Decoder::new(&mut pb, "d", [4, 8, 12, 16], 8, 9).unwrap();
        for (_, p) in pb.finish() {
            p.set_data(vec![0.0; p.numel()]).unwrap();
        }
        let mut rng = dualseg_tensor::SplitMix64::new(0);
        let mut lv = Vec::new();
        for (i, c) in [4, 8, 12, 16].into_iter().enumerate() {
            let s = 16 >> i;
            lv.push(Tensor::from_vec(&[1, c, s, s], (0..c * s * s).map(|_| rng.normal()).collect()).unwrap());
        }
        let out = d.forward(&FeaturePyramid { levels: lv }).unwrap();
        assert_eq!(out.shape(), &[1, 9, 16, 16]);
        assert!(out.to_vec().iter().all(|&v| v == 0.0));
        let probs = out.softmax(1).unwrap().to_vec();
        assert!(probs.iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn wrong_arity_rejected() {
        let mut pb = ParamBuilder::<f64>::new(0);
        let d = Decoder::new(&mut pb, "d", [4, 4, 4, 4], 4, 2).unwrap();
        let lv = vec![Tensor::zeros(&[1, 4, 4, 4]); 3];
        assert!(d.forward(&FeaturePyramid { levels: lv }).is_err());
    }
}
