//! Training and evaluation loops.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dualseg_tensor::{cosine_lr, AdamW, AdamWConfig, SplitMix64, Tensor};

use crate::config::NetConfig;
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::loss::{alpha_from_histogram, loss, FocalConfig, LossKind};
use crate::metrics::ConfusionMatrix;
use crate::model::{logits_to_labels, DualSegNet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub gamma: f64,
    /// Weight classes by inverse frequency in the training set; otherwise all 1.
    pub balanced_alpha: bool,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::desk(),
            seed: 0,
            epochs: 20,
            batch_size: 4,
            lr: 5e-4,
            weight_decay: 0.01,
            loss: LossKind::Focal,
            gamma: 2.0,
            balanced_alpha: true,
            augment: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

impl StepRecord {
    pub fn line(&self) -> String {
        format!("{} {:.9e} {:.9e}", self.step, self.lr, self.loss)
    }
}

/// Where a run writes its checkpoint and loss log.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub net: DualSegNet<f32>,
    pub focal: FocalConfig,
    /// `None` for a zero base learning rate: steps then leave the weights untouched.
    optimizer: Option<AdamW>,
    params: Vec<Tensor<f32>>,
    order_rng: SplitMix64,
    augment_rng: SplitMix64,
    step: usize,
    total_steps: usize,
    pub history: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        let size = data.patch_size().ok_or_else(|| Error::Data("training set is empty".into()))?;
        config.net.validate_input(size, size)?;
        if config.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(config.lr >= 0.0 && config.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", config.lr)));
        }
        if config.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        let n_cls = config.net.num_classes;
        let alpha = if config.balanced_alpha {
            alpha_from_histogram(&data.class_histogram(n_cls))
        } else {
            vec![1.0; n_cls]
        };
        let focal = FocalConfig::new(config.gamma, alpha)?;
        let net = DualSegNet::new(&config.net, config.seed)?;
        let params = net.params();
        let optimizer = if config.lr > 0.0 {
            Some(AdamW::new(
                &params,
                AdamWConfig {
                    lr: config.lr,
                    weight_decay: config.weight_decay,
                    ..AdamWConfig::default()
                },
            )?)
        } else {
            None
        };
        let total_steps = config.epochs * data.len().div_ceil(config.batch_size);
        Ok(Trainer {
            order_rng: SplitMix64::derive(config.seed, 1),
            augment_rng: SplitMix64::derive(config.seed, 2),
            config,
            net,
            focal,
            optimizer,
            params,
            step: 0,
            total_steps,
            history: Vec::new(),
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Loss of `batch` at full label resolution.
    pub fn batch_loss(&self, batch: &Batch) -> Result<Tensor<f32>> {
        let logits = self.net.forward_full(&batch.spec, &batch.sar)?;
        loss(self.config.loss, &logits, &batch.labels, &self.focal)
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let lr = cosine_lr(self.step.min(self.total_steps), self.total_steps, self.config.lr);
        self.net.zero_grad();
        let l = self.batch_loss(batch)?;
        let value = f64::from(l.item());
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss is {value} at step {}", self.step)));
        }
        l.backward()?;
        if let Some(opt) = &mut self.optimizer {
            opt.step(&self.params, lr)?;
        }
        let rec = StepRecord {
            step: self.step,
            lr,
            loss: value,
        };
        self.step += 1;
        self.history.push(rec);
        Ok(rec)
    }

    /// One pass over `data` in shuffled order.
    pub fn epoch(&mut self, data: &Dataset) -> Result<Vec<StepRecord>> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.order_rng.shuffle(&mut order);
        let mut out = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let aug = self.config.augment.then_some(&mut self.augment_rng);
            let batch = data.batch(chunk, aug)?;
            out.push(self.step(&batch)?);
        }
        Ok(out)
    }

    /// Full run. With `output`, the checkpoint is rewritten after every
    /// epoch and the loss log holds one `step lr loss` line per step.
    pub fn run(&mut self, data: &Dataset, output: Option<&RunOutput>) -> Result<()> {
        let mut log = String::new();
        for _ in 0..self.config.epochs {
            for rec in self.epoch(data)? {
                writeln!(log, "{}", rec.line()).expect("writing to a String");
            }
            if let Some(out) = output {
                self.net.save(&out.checkpoint)?;
                fs::write(&out.log, &log).map_err(|e| Error::io(&out.log, e))?;
            }
        }
        Ok(())
    }
}

/// Per-pixel predictions at full resolution for a batch.
pub fn predict(net: &DualSegNet<f32>, batch: &Batch) -> Result<Vec<u8>> {
    let logits = net.forward_full(&batch.spec.detach(), &batch.sar.detach())?;
    Ok(logits_to_labels(&logits)?.labels)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    /// Batch-1 forward passes per second.
    pub fps: f64,
}

pub fn evaluate(net: &DualSegNet<f32>, data: &Dataset) -> Result<Evaluation> {
    let mut cm = ConfusionMatrix::new(net.config.num_classes);
    let start = Instant::now();
    for i in 0..data.len() {
        let batch = data.batch(&[i], None)?;
        cm.accumulate(&predict(net, &batch)?, &batch.labels)?;
    }
    let secs = start.elapsed().as_secs_f64();
    let fps = if data.is_empty() || secs == 0.0 {
        0.0
    } else {
        data.len() as f64 / secs
    };
    Ok(Evaluation { confusion: cm, fps })
}

/// Convenience: load the checkpoint at `path` into a fresh network.
pub fn load_net(cfg: &NetConfig, path: &Path) -> Result<DualSegNet<f32>> {
    let net = DualSegNet::new(cfg, 0)?;
    net.load(path)?;
    Ok(net)
}
