//! Analytic parameter and FLOP counts derived from a [`NetConfig`] alone,
//! broken down by stage and module kind.
//!
//! FLOPs count one multiply-accumulate as 2. Convolutions, linear layers and
//! the two attention contractions (`QK^T`, `AV`) are counted; norms,
//! activations, softmax, residual adds, gating products, pooling,
//! upsampling and bias adds are not.

use std::collections::BTreeMap;
use std::fmt;

use dualseg_tensor::Element;

use crate::config::NetConfig;
use crate::error::Result;
use crate::model::embed::{embed_geometry, PatchEmbed};
use crate::model::fusion::{gate_hidden, Mmam};
use crate::model::attention::{CrossAttention, EfficientSelfAttention};
use crate::model::decoder::Decoder;
use crate::model::mix_ffn::MixFfn;
use crate::model::nn::LayerNorm;
use crate::model::DualSegNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Embed,
    SelfAttention,
    Norm,
    CrossAttention,
    MixFfn,
    Fusion,
    Decoder,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Embed,
        Category::SelfAttention,
        Category::Norm,
        Category::CrossAttention,
        Category::MixFfn,
        Category::Fusion,
        Category::Decoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Embed => "embed",
            Category::SelfAttention => "self_attn",
            Category::Norm => "norm",
            Category::CrossAttention => "cross_attn",
            Category::MixFfn => "mix_ffn",
            Category::Fusion => "fusion",
            Category::Decoder => "decoder",
        }
    }

    /// Category of a registered parameter name.
    pub fn of_param(name: &str) -> Option<Category> {
        let parts: Vec<&str> = name.split('.').collect();
        if parts.first() == Some(&"decoder") {
            return Some(Category::Decoder);
        }
        match *parts.get(1)? {
            "spec_embed" | "sar_embed" | "merge" => Some(Category::Embed),
            "fusion" => Some(Category::Fusion),
            b if b.starts_with("block") => match *parts.get(2)? {
                "spec_attn" | "sar_attn" => Some(Category::SelfAttention),
                "spec_norm1" | "sar_norm1" => Some(Category::Norm),
                "cross_to_spec" | "cross_to_sar" => Some(Category::CrossAttention),
                "spec_ffn" | "sar_ffn" => Some(Category::MixFfn),
                _ => None,
            },
            _ => None,
        }
    }
}

/// Counts keyed by `(scope, category)` where scope is `stage1`..`stage4` or `decoder`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountReport {
    pub input: (usize, usize),
    pub entries: BTreeMap<(String, Category), (u64, u64)>,
}

impl CountReport {
    fn add(&mut self, scope: &str, cat: Category, params: u64, flops: u64) {
        let e = self.entries.entry((scope.to_owned(), cat)).or_default();
        e.0 += params;
        e.1 += flops;
    }

    pub fn total_params(&self) -> u64 {
        self.entries.values().map(|v| v.0).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.entries.values().map(|v| v.1).sum()
    }

    pub fn by_category(&self) -> BTreeMap<Category, (u64, u64)> {
        let mut m = BTreeMap::new();
        for ((_, c), &(p, f)) in &self.entries {
            let e: &mut (u64, u64) = m.entry(*c).or_default();
            e.0 += p;
            e.1 += f;
        }
        m
    }
}

impl fmt::Display for CountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input={}x{}", self.input.0, self.input.1)?;
        for ((scope, cat), (p, fl)) in &self.entries {
            writeln!(f, "{scope}.{} params={p} flops={fl}", cat.name())?;
        }
        for (cat, (p, fl)) in self.by_category() {
            writeln!(f, "total.{} params={p} flops={fl}", cat.name())?;
        }
        writeln!(f, "params={}", self.total_params())?;
        write!(f, "flops={}", self.total_flops())
    }
}

fn linear_flops(tokens: usize, d_in: usize, d_out: usize) -> u64 {
    2 * (tokens * d_in * d_out) as u64
}

fn esa_flops(n: usize, c: usize, r: usize) -> u64 {
    let m = n / r;
    let sr = if r > 1 { linear_flops(m, c * r, c) } else { 0 };
    sr + 2 * linear_flops(n, c, c) + 2 * linear_flops(m, c, c) + 4 * (n * m * c) as u64
}

fn cross_flops(n: usize, cp: usize, ca: usize, r: usize) -> u64 {
    let m = n / r;
    let sr = if r > 1 { linear_flops(m, cp * r, cp) } else { 0 };
    linear_flops(n, ca, cp) + sr + 2 * linear_flops(n, cp, cp) + 2 * linear_flops(m, cp, cp) + 4 * (n * m * cp) as u64
}

fn ffn_flops(n: usize, c: usize, ratio: usize) -> u64 {
    let hid = c * ratio;
    linear_flops(n, c, hid) + 2 * (n * hid * 9) as u64 + linear_flops(n, hid, c)
}

fn conv_flops(out_h: usize, out_w: usize, c_in: usize, c_out: usize, k: usize) -> u64 {
    2 * (out_h * out_w * c_out * c_in * k * k) as u64
}

/// Counts for one `h x w` input of the configured band counts.
pub fn count(cfg: &NetConfig, h: usize, w: usize) -> Result<CountReport> {
    type P = f32;
    let grids = cfg.validate_input(h, w)?;
    let mut rep = CountReport {
        input: (h, w),
        ..Default::default()
    };
    for (i, st) in cfg.stages.iter().enumerate() {
        let scope = format!("stage{}", i + 1);
        let (gh, gw) = grids[i];
        let n = gh * gw;
        let (cs, ca) = cfg.branch_channels(i);
        let (k, _, _) = embed_geometry(i);
        if i == 0 {
            for (bands, c) in [(cfg.spec_bands, cs), (cfg.sar_bands, ca)] {
                rep.add(&scope, Category::Embed, PatchEmbed::<P>::param_count(bands, c, 0), conv_flops(gh, gw, bands, c, k));
            }
        } else {
            let prev = cfg.stages[i - 1].channels;
            rep.add(
                &scope,
                Category::Embed,
                PatchEmbed::<P>::param_count(prev, st.channels, i),
                conv_flops(gh, gw, prev, st.channels, k),
            );
        }
        let rs = cfg.self_attention_reduction(i);
        let rc = st.reduction;
        for _ in 0..st.depth {
            for c in [cs, ca] {
                rep.add(&scope, Category::Norm, LayerNorm::<P>::param_count(c), 0);
                rep.add(&scope, Category::SelfAttention, EfficientSelfAttention::<P>::param_count(c, rs), esa_flops(n, c, rs));
                rep.add(&scope, Category::MixFfn, MixFfn::<P>::param_count(c, st.mlp_ratio), ffn_flops(n, c, st.mlp_ratio));
            }
            if cfg.ablation.cross_attention {
                for (p, a) in [(cs, ca), (ca, cs)] {
                    rep.add(&scope, Category::CrossAttention, CrossAttention::<P>::param_count(p, a, rc), cross_flops(n, p, a, rc));
                }
            }
        }
        if cfg.ablation.mmam {
            let c = cs + ca;
            let hid = gate_hidden(c, cfg.gate_reduction);
            let fl = 2 * linear_flops(1, c, hid) + linear_flops(1, hid, cs) + linear_flops(1, hid, ca);
            rep.add(&scope, Category::Fusion, Mmam::<P>::param_count(cs, ca, cfg.gate_reduction), fl);
        }
    }
    let widths = cfg.stages.map(|s| s.channels);
    let cd = cfg.decoder_channels;
    let n1 = grids[0].0 * grids[0].1;
    let mut fl: u64 = grids.iter().zip(widths).map(|(&(gh, gw), c)| linear_flops(gh * gw, c, cd)).sum();
    fl += linear_flops(n1, 4 * cd, cd) + linear_flops(n1, cd, cfg.num_classes);
    rep.add("decoder", Category::Decoder, Decoder::<P>::param_count(widths, cd, cfg.num_classes), fl);
    Ok(rep)
}

/// Parameter counts of a built network, grouped like [`count`].
pub fn built_params<T: Element>(net: &DualSegNet<T>) -> BTreeMap<(String, Category), u64> {
    let mut m = BTreeMap::new();
    for (name, t) in net.named_params() {
        let cat = Category::of_param(name).unwrap_or_else(|| panic!("uncategorised parameter {name}"));
        let scope = name.split('.').next().unwrap_or_default().to_owned();
        *m.entry((scope, cat)).or_default() += t.numel() as u64;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;

    #[test]
    fn analytic_params_match_built_network() {
        for ab in Ablation::all_combinations() {
            let cfg = NetConfig {
                ablation: ab,
                ..NetConfig::desk()
            };
            let rep = count(&cfg, 32, 32).unwrap();
            let net = DualSegNet::<f32>::new(&cfg, 0).unwrap();
            let built = built_params(&net);
            let analytic: BTreeMap<_, _> = rep.entries.iter().filter(|(_, v)| v.0 > 0).map(|(k, v)| (k.clone(), v.0)).collect();
            assert_eq!(analytic, built, "{}", ab.label());
            assert_eq!(rep.total_params(), net.param_count());
        }
    }

    #[test]
    fn every_param_has_a_category() {
        let net = DualSegNet::<f32>::new(&NetConfig::desk(), 0).unwrap();
        assert!(net.named_params().iter().all(|(n, _)| Category::of_param(n).is_some()));
    }

    #[test]
    fn attention_flops_include_contractions() {
        // N = 4, C = 2, R = 1: four 4x2x2 projections plus QK^T and AV
        assert_eq!(esa_flops(4, 2, 1), 4 * 2 * 4 * 2 * 2 + 2 * 2 * 4 * 4 * 2);
    }
}
