//! Finite-difference checks of the network modules and of the whole
//! network, in `f64`.

use dualseg_tensor::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use dualseg_tensor::{SplitMix64, Tensor};

use crate::config::NetConfig;
use crate::error::Result;
use crate::loss::{focal_loss, FocalConfig};
use crate::model::attention::{CrossAttention, EfficientSelfAttention};
use crate::model::decoder::{Decoder, FeaturePyramid};
use crate::model::fusion::Mmam;
use crate::model::mix_ffn::MixFfn;
use crate::model::nn::ParamBuilder;
use crate::model::DualSegNet;

#[derive(Debug, Clone)]
pub struct ModuleCheck {
    pub name: String,
    pub report: GradCheckReport,
}

fn random(rng: &mut SplitMix64, shape: &[usize], std: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Ok(Tensor::param(shape, (0..n).map(|_| rng.normal() * std).collect())?)
}

/// Fixed random contraction so every output coordinate reaches the loss.
fn project(y: &Tensor<f64>, rng: &mut SplitMix64) -> Result<Tensor<f64>> {
    let w = Tensor::from_vec(y.shape(), (0..y.numel()).map(|_| rng.uniform() * 2.0 - 1.0).collect())?;
    Ok(y.mul(&w)?.sum_all())
}

/// Softmax is invariant to a constant shift of the scores, so key biases
/// have an identically zero gradient; a finite difference there only
/// measures roundoff.
fn structurally_zero(name: &str) -> bool {
    name.ends_with(".k.bias")
}

/// Replaces the small initial weights with O(1) values so that attention
/// weights and gates are far from uniform. Returns the tensors to probe.
fn scramble(params: &[(String, Tensor<f64>)], rng: &mut SplitMix64, std: f64) -> Result<Vec<Tensor<f64>>> {
    let mut probed = Vec::new();
    for (name, p) in params {
        p.set_data((0..p.numel()).map(|_| rng.normal() * std).collect())?;
        if !structurally_zero(name) {
            probed.push(p.clone());
        }
    }
    Ok(probed)
}

fn check(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    loss: impl Fn() -> Result<Tensor<f64>>,
    opts: GradCheckOptions,
) -> Result<ModuleCheck> {
    let report = check_gradients(&inputs, || loss().map_err(to_tensor_err), opts)?;
    Ok(ModuleCheck {
        name: name.to_owned(),
        report,
    })
}

fn to_tensor_err(e: crate::Error) -> dualseg_tensor::TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => dualseg_tensor::TensorError::Contract(other.to_string()),
    }
}

/// Attention, Mix-FFN, fusion and decoder checks on small random instances.
pub fn module_suite(seed: u64, opts: GradCheckOptions) -> Result<Vec<ModuleCheck>> {
    let mut rng = SplitMix64::derive(seed, 7);
    let mut out = Vec::new();

    for (c, heads, r, n) in [(4, 1, 1, 6), (6, 2, 2, 8), (8, 4, 4, 16)] {
        let mut pb = ParamBuilder::<f64>::new(seed);
        let m = EfficientSelfAttention::new(&mut pb, "sa", c, heads, r)?;
        let mut inputs = scramble(&pb.finish(), &mut rng, 0.5)?;
        let x = random(&mut rng, &[2, n, c], 1.0)?;
        inputs.push(x.clone());
        let wr = SplitMix64::derive(seed, c as u64);
        out.push(check(
            &format!("efficient_self_attention c={c} heads={heads} R={r} N={n}"),
            inputs,
            || project(&m.forward(&x)?, &mut wr.clone()),
            opts,
        )?);
    }

    for (cp, ca, heads, r, n) in [(4, 2, 1, 1, 4), (6, 2, 2, 2, 8), (3, 5, 1, 4, 8)] {
        let mut pb = ParamBuilder::<f64>::new(seed);
        let m = CrossAttention::new(&mut pb, "ca", cp, ca, heads, r)?;
        let mut inputs = scramble(&pb.finish(), &mut rng, 0.5)?;
        let p = random(&mut rng, &[2, n, cp], 1.0)?;
        let a = random(&mut rng, &[2, n, ca], 1.0)?;
        inputs.extend([p.clone(), a.clone()]);
        let wr = SplitMix64::derive(seed, 100 + cp as u64);
        out.push(check(
            &format!("cross_attention cp={cp} ca={ca} heads={heads} R={r} N={n}"),
            inputs,
            || project(&m.forward(&p, &a)?, &mut wr.clone()),
            opts,
        )?);
    }

    for (c, ratio, h, w) in [(2, 2, 8, 8), (4, 4, 3, 5), (3, 1, 2, 2)] {
        let mut pb = ParamBuilder::<f64>::new(seed);
        let m = MixFfn::new(&mut pb, "ffn", c, ratio)?;
        let mut inputs = scramble(&pb.finish(), &mut rng, 0.5)?;
        let x = random(&mut rng, &[1, h * w, c], 1.0)?;
        inputs.push(x.clone());
        let wr = SplitMix64::derive(seed, 200 + c as u64);
        out.push(check(
            &format!("mix_ffn c={c} ratio={ratio} grid={h}x{w}"),
            inputs,
            || project(&m.forward(&x, h, w)?, &mut wr.clone()),
            opts,
        )?);
    }

    for (cs, ca, red, hw) in [(3, 1, 4, 1), (6, 2, 2, 3), (12, 4, 4, 2)] {
        let mut pb = ParamBuilder::<f64>::new(seed);
        let m = Mmam::new(&mut pb, "mmam", cs, ca, red)?;
        let mut inputs = scramble(&pb.finish(), &mut rng, 0.8)?;
        let s = random(&mut rng, &[2, cs, hw, hw], 1.0)?;
        let a = random(&mut rng, &[2, ca, hw, hw], 1.0)?;
        inputs.extend([s.clone(), a.clone()]);
        let wr = SplitMix64::derive(seed, 300 + cs as u64);
        out.push(check(
            &format!("mmam cs={cs} ca={ca} r={red} grid={hw}x{hw}"),
            inputs,
            || project(&m.forward(&s, &a)?, &mut wr.clone()),
            opts,
        )?);
    }

    for (widths, cd, ncls, side) in [([2, 3, 4, 5], 3, 4, 4), ([4, 4, 4, 4], 2, 9, 8), ([1, 2, 2, 3], 4, 2, 2)] {
        let mut pb = ParamBuilder::<f64>::new(seed);
        let m = Decoder::new(&mut pb, "dec", widths, cd, ncls)?;
        let mut inputs = scramble(&pb.finish(), &mut rng, 0.5)?;
        let mut levels = Vec::new();
        for (i, &c) in widths.iter().enumerate() {
            let s = (side >> i).max(1);
            levels.push(random(&mut rng, &[1, c, s, s], 1.0)?);
        }
        inputs.extend(levels.iter().cloned());
        let pyramid = FeaturePyramid { levels };
        let wr = SplitMix64::derive(seed, 400 + ncls as u64);
        out.push(check(
            &format!("decoder widths={widths:?} c_dec={cd} classes={ncls} side={side}"),
            inputs,
            || project(&m.forward(&pyramid)?, &mut wr.clone()),
            opts,
        )?);
    }
    Ok(out)
}

/// End-to-end check of the focal loss of `cfg` on one random `size x size`
/// patch, over every parameter tensor and both inputs.
pub fn network_check(cfg: &NetConfig, size: usize, seed: u64, opts: GradCheckOptions) -> Result<ModuleCheck> {
    let net = DualSegNet::<f64>::new(cfg, seed)?;
    let mut rng = SplitMix64::derive(seed, 11);
    let mut inputs = scramble(net.named_params(), &mut rng, 0.1)?;
    let spec = Tensor::param(
        &[1, cfg.spec_bands, size, size],
        (0..cfg.spec_bands * size * size).map(|_| rng.uniform()).collect(),
    )?;
    let sar = Tensor::param(
        &[1, cfg.sar_bands, size, size],
        (0..cfg.sar_bands * size * size).map(|_| rng.uniform()).collect(),
    )?;
    inputs.extend([spec.clone(), sar.clone()]);
    let labels: Vec<u8> = (0..size * size).map(|_| rng.below(cfg.num_classes) as u8).collect();
    let alpha: Vec<f64> = (0..cfg.num_classes).map(|_| 0.5 + rng.uniform()).collect();
    let focal = FocalConfig::new(2.0, alpha)?;
    check(
        &format!("network {size}x{size} {}", cfg.ablation.label()),
        inputs,
        || focal_loss(&net.forward_full(&spec, &sar)?, &labels, &focal),
        opts,
    )
}
