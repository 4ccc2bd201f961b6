//! Segmentation losses over `[b, C, h, w]` logits and per-pixel labels.

use std::fmt;
use std::str::FromStr;

use dualseg_tensor::{Element, Tensor, TensorError};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: Vec<f64>,
}

impl FocalConfig {
    pub fn new(gamma: f64, alpha: Vec<f64>) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma must be >= 0, got {gamma}")));
        }
        if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("focal alpha weights must all be positive".into()));
        }
        Ok(FocalConfig { gamma, alpha })
    }

    /// Unweighted: every `alpha` is 1.
    pub fn uniform(gamma: f64, n_cls: usize) -> Self {
        FocalConfig {
            gamma,
            alpha: vec![1.0; n_cls],
        }
    }
}

/// Inverse class frequency normalised to mean 1. Classes that never occur
/// get the mean weight of the observed ones.
pub fn alpha_from_histogram(counts: &[u64]) -> Vec<f64> {
    let present: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| 1.0 / c as f64).collect();
    if present.is_empty() {
        return vec![1.0; counts.len()];
    }
    let fill = present.iter().sum::<f64>() / present.len() as f64;
    let raw: Vec<f64> = counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { fill }).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|r| r / mean).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Focal,
    CrossEntropy,
    BinaryCrossEntropy,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "focal" => Ok(LossKind::Focal),
            "ce" => Ok(LossKind::CrossEntropy),
            "bce" => Ok(LossKind::BinaryCrossEntropy),
            other => Err(Error::Config(format!("unknown loss {other:?}, expected focal, ce or bce"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Focal => "focal",
            LossKind::CrossEntropy => "ce",
            LossKind::BinaryCrossEntropy => "bce",
        })
    }
}

/// Logits `[b, C, h, w]` to rows `[b*h*w, C]`, checking the labels against them.
fn pixel_rows<T: Element>(logits: &Tensor<T>, labels: &[u8]) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(TensorError::Dimension {
            op: "loss",
            msg: format!("expected [b, C, h, w] logits, got {s:?}"),
        }
        .into());
    }
    let (b, c, n) = (s[0], s[1], s[2] * s[3]);
    if labels.len() != b * n {
        return Err(TensorError::Dimension {
            op: "loss",
            msg: format!("{} labels for logits {s:?}", labels.len()),
        }
        .into());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
    }
    let rows = logits.reshape(&[b, c, n])?.permute(&[0, 2, 1])?.reshape(&[b * n, c])?;
    Ok((rows, labels.iter().map(|&l| l as usize).collect()))
}

/// `mean(-alpha_t (1 - p_t)^gamma log p_t)` over all pixels.
pub fn focal_loss<T: Element>(logits: &Tensor<T>, labels: &[u8], cfg: &FocalConfig) -> Result<Tensor<T>> {
    let (rows, idx) = pixel_rows(logits, labels)?;
    if cfg.alpha.len() != rows.shape()[1] {
        return Err(Error::Config(format!(
            "{} alpha weights for {} classes",
            cfg.alpha.len(),
            rows.shape()[1]
        )));
    }
    let log_pt = rows.log_softmax(1)?.pick(&idx)?;
    let focus = log_pt.exp().neg().add_scalar(1.0).pow_scalar(cfg.gamma);
    let alpha_t: Vec<T> = idx.iter().map(|&k| T::from_f64_lossy(cfg.alpha[k])).collect();
    let alpha_t = Tensor::from_vec(&[idx.len()], alpha_t)?;
    Ok(alpha_t.mul(&focus)?.mul(&log_pt)?.neg().mean_all())
}

/// Mean categorical cross-entropy.
pub fn ce_loss<T: Element>(logits: &Tensor<T>, labels: &[u8]) -> Result<Tensor<T>> {
    let (rows, idx) = pixel_rows(logits, labels)?;
    Ok(rows.log_softmax(1)?.pick(&idx)?.neg().mean_all())
}

/// One-vs-all sigmoid cross-entropy with one-hot targets, averaged over
/// pixels and classes: `mean(softplus(z) - y z)`.
pub fn bce_loss<T: Element>(logits: &Tensor<T>, labels: &[u8]) -> Result<Tensor<T>> {
    let (rows, idx) = pixel_rows(logits, labels)?;
    let c = rows.shape()[1];
    let mut onehot = vec![T::zero(); idx.len() * c];
    for (r, &k) in idx.iter().enumerate() {
        onehot[r * c + k] = T::one();
    }
    let y = Tensor::from_vec(rows.shape(), onehot)?;
    Ok(rows.softplus().sub(&y.mul(&rows)?)?.mean_all())
}

pub fn loss<T: Element>(kind: LossKind, logits: &Tensor<T>, labels: &[u8], focal: &FocalConfig) -> Result<Tensor<T>> {
    match kind {
        LossKind::Focal => focal_loss(logits, labels, focal),
        LossKind::CrossEntropy => ce_loss(logits, labels),
        LossKind::BinaryCrossEntropy => bce_loss(logits, labels),
    }
}
