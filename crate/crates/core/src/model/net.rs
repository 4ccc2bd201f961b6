//! The full two-branch network: embeddings, encoder stages with fusion,
//! and the decoder.

use std::path::Path;

use dualseg_tensor::checkpoint::{self, Record};
use dualseg_tensor::{Element, Tensor, TensorError};

use super::block::{BlockSpec, DualBlock};
use super::decoder::{Decoder, FeaturePyramid};
use super::embed::PatchEmbed;
use super::fusion::{stage_transition, Fusion, Mmam};
use super::nn::{tokens_to_map, ParamBuilder};
use crate::config::NetConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Stage<T: Element> {
    /// Separate spectral and SAR embeddings in stage 1.
    pub embeds: Option<(PatchEmbed<T>, PatchEmbed<T>)>,
    /// Merge of the previous fused map in stages 2-4.
    pub merge: Option<PatchEmbed<T>>,
    pub blocks: Vec<DualBlock<T>>,
    pub fusion: Fusion<T>,
}

#[derive(Debug, Clone)]
pub struct NetOutput<T: Element> {
    /// `[b, N_cls, H/4, W/4]`.
    pub logits: Tensor<T>,
    pub pyramid: FeaturePyramid<T>,
}

#[derive(Debug, Clone)]
pub struct DualSegNet<T: Element> {
    pub config: NetConfig,
    pub stages: Vec<Stage<T>>,
    pub decoder: Decoder<T>,
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Element> DualSegNet<T> {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed);
        let mut stages = Vec::with_capacity(4);
        for (i, st) in config.stages.iter().enumerate() {
            let (cs, ca) = config.branch_channels(i);
            let stage = pb.scope(&format!("stage{}", i + 1), |pb| {
                let (embeds, merge) = if i == 0 {
                    let e = (
                        PatchEmbed::new(pb, "spec_embed", config.spec_bands, cs, 0)?,
                        PatchEmbed::new(pb, "sar_embed", config.sar_bands, ca, 0)?,
                    );
                    (Some(e), None)
                } else {
                    (None, Some(PatchEmbed::new(pb, "merge", config.stages[i - 1].channels, st.channels, i)?))
                };
                let spec = BlockSpec {
                    spec_channels: cs,
                    sar_channels: ca,
                    heads: st.heads,
                    self_reduction: config.self_attention_reduction(i),
                    cross_reduction: st.reduction,
                    mlp_ratio: st.mlp_ratio,
                    cross_attention: config.ablation.cross_attention,
                };
                let blocks = (0..st.depth)
                    .map(|j| DualBlock::new(pb, &format!("block{}", j + 1), spec))
                    .collect::<Result<Vec<_>>>()?;
                let fusion = if config.ablation.mmam {
                    Fusion::Gated(Mmam::new(pb, "fusion", cs, ca, config.gate_reduction)?)
                } else {
                    Fusion::Concat
                };
                Ok(Stage {
                    embeds,
                    merge,
                    blocks,
                    fusion,
                })
            })?;
            stages.push(stage);
        }
        let widths = config.stages.map(|s| s.channels);
        let decoder = Decoder::new(&mut pb, "decoder", widths, config.decoder_channels, config.num_classes)?;
        Ok(DualSegNet {
            config: config.clone(),
            stages,
            decoder,
            params: pb.finish(),
        })
    }

    /// Parameters in registration order.
    pub fn named_params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|(_, t)| t.numel() as u64).sum()
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// `spec: [b, bands, H, W]`, `sar: [b, bands, H, W]`.
    pub fn forward(&self, spec: &Tensor<T>, sar: &Tensor<T>) -> Result<NetOutput<T>> {
        let (ss, sa) = (spec.shape(), sar.shape());
        if ss.len() != 4 || sa.len() != 4 || ss[0] != sa[0] || ss[2..] != sa[2..] {
            return Err(TensorError::Shape {
                op: "forward",
                lhs: ss.to_vec(),
                rhs: sa.to_vec(),
            }
            .into());
        }
        if ss[1] != self.config.spec_bands || sa[1] != self.config.sar_bands {
            return Err(Error::Config(format!(
                "network expects {} + {} bands, got {} + {}",
                self.config.spec_bands, self.config.sar_bands, ss[1], sa[1]
            )));
        }
        self.config.validate_input(ss[2], ss[3])?;
        let mut levels = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            let (mut xs, mut xa, h, w) = match (&stage.embeds, &stage.merge) {
                (Some((es, ea)), _) => {
                    let (xs, h, w) = es.forward(spec)?;
                    let (xa, _, _) = ea.forward(sar)?;
                    (xs, xa, h, w)
                }
                (None, Some(m)) => stage_transition(m, &levels[i - 1], self.config.branch_channels(i))?,
                (None, None) => unreachable!("every stage has an embedding"),
            };
            for block in &stage.blocks {
                (xs, xa) = block.forward(&xs, &xa, h, w)?;
            }
            let fused = stage.fusion.forward(&tokens_to_map(&xs, h, w)?, &tokens_to_map(&xa, h, w)?)?;
            levels.push(fused);
        }
        let pyramid = FeaturePyramid { levels };
        let logits = self.decoder.forward(&pyramid)?;
        Ok(NetOutput { logits, pyramid })
    }

    /// Logits bilinearly resized to the input resolution.
    pub fn forward_full(&self, spec: &Tensor<T>, sar: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.forward(spec, sar)?;
        Ok(out.logits.bilinear_upsample(spec.shape()[2], spec.shape()[3])?)
    }

    pub fn to_records(&self) -> Vec<Record> {
        self.params.iter().map(|(n, t)| Record::from_tensor(n, t)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_records()).map_err(|e| match e {
            TensorError::Io(io) => Error::io(path, io),
            other => other.into(),
        })
    }

    /// Overwrites every parameter from records; names and shapes must match exactly.
    pub fn load_records(&self, records: &[Record]) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, network has {}",
                records.len(),
                self.params.len()
            )));
        }
        for (r, (name, t)) in records.iter().zip(&self.params) {
            if &r.name != name || r.shape != t.shape() {
                return Err(Error::Data(format!(
                    "checkpoint parameter {} {:?} does not match {} {:?}",
                    r.name,
                    r.shape,
                    name,
                    t.shape()
                )));
            }
            t.set_data(r.values::<T>()?)?;
        }
        Ok(())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        let records = checkpoint::load(path).map_err(|e| match e {
            TensorError::Io(io) => Error::io(path, io),
            other => other.into(),
        })?;
        self.load_records(&records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Ablation, SplitRatio};

    fn inputs(b: usize, s: usize) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = dualseg_tensor::SplitMix64::new(0);
        let spec = Tensor::from_vec(&[b, 10, s, s], (0..b * 10 * s * s).map(|_| rng.uniform() as f32).collect()).unwrap();
        let sar = Tensor::from_vec(&[b, 2, s, s], (0..b * 2 * s * s).map(|_| rng.uniform() as f32).collect()).unwrap();
        (spec, sar)
    }

    #[test]
    fn desk_shapes_at_64() {
        let net = DualSegNet::<f32>::new(&NetConfig::desk(), 0).unwrap();
        let (s, a) = inputs(1, 64);
        let out = net.forward(&s, &a).unwrap();
        assert_eq!(out.logits.shape(), &[1, 9, 16, 16]);
        let shapes: Vec<_> = out.pyramid.levels.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![1, 16, 16, 16], vec![1, 32, 8, 8], vec![1, 48, 4, 4], vec![1, 64, 2, 2]]);
        assert!(out.logits.all_finite());
    }

    #[test]
    fn ablations_and_splits_build() {
        for ab in Ablation::all_combinations() {
            for split in [SplitRatio::QUARTER, SplitRatio::HALF, SplitRatio::THREE_QUARTERS] {
                let cfg = NetConfig {
                    ablation: ab,
                    split,
                    ..NetConfig::desk()
                };
                let net = DualSegNet::<f32>::new(&cfg, 1).unwrap();
                let (s, a) = inputs(1, 32);
                assert_eq!(net.forward(&s, &a).unwrap().logits.shape(), &[1, 9, 8, 8]);
            }
        }
    }

    #[test]
    fn batch_permutation_commutes() {
        let net = DualSegNet::<f32>::new(&NetConfig::desk(), 3).unwrap();
        let (s, a) = inputs(2, 32);
        let out = net.forward(&s, &a).unwrap().logits.to_vec();
        let swap = |t: &Tensor<f32>| {
            let parts = t.split(&[1, 1], 0).unwrap();
            Tensor::concat(&[parts[1].clone(), parts[0].clone()], 0).unwrap()
        };
        let out2 = net.forward(&swap(&s), &swap(&a)).unwrap().logits.to_vec();
        let half = out.len() / 2;
        assert_eq!(out[..half], out2[half..]);
        assert_eq!(out[half..], out2[..half]);
    }

    #[test]
    fn wrong_band_count_is_config_error() {
        let net = DualSegNet::<f32>::new(&NetConfig::desk(), 0).unwrap();
        let s = Tensor::<f32>::zeros(&[1, 11, 32, 32]);
        let a = Tensor::<f32>::zeros(&[1, 2, 32, 32]);
        assert!(matches!(net.forward(&s, &a), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ssfw");
        let a = DualSegNet::<f32>::new(&NetConfig::desk(), 5).unwrap();
        a.save(&path).unwrap();
        let b = DualSegNet::<f32>::new(&NetConfig::desk(), 6).unwrap();
        b.load(&path).unwrap();
        for ((_, x), (_, y)) in a.named_params().iter().zip(b.named_params()) {
            assert_eq!(x.to_vec(), y.to_vec());
        }
        let other = DualSegNet::<f32>::new(&NetConfig { ablation: Ablation::NONE, ..NetConfig::desk() }, 0).unwrap();
        assert!(matches!(other.load(&path), Err(Error::Data(_))));
    }
}
