//! Desk-scale component and channel-split ablations on a fixed synthetic
//! benchmark.

use std::fmt;

use crate::config::{Ablation, NetConfig, SplitRatio};
use crate::data::{synthesize, Dataset, SynthConfig};
use crate::error::Result;
use crate::train::{evaluate, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    /// Template for every run; `net.ablation`, `net.split` and `seed` are overridden.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub train_patches: usize,
    pub eval_patches: usize,
    pub patch_size: usize,
    /// Extra split ratios evaluated with every component on.
    pub extra_splits: Vec<SplitRatio>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train: TrainConfig {
                epochs: 12,
                lr: 2e-3,
                ..TrainConfig::default()
            },
            seeds: vec![0, 1, 2],
            data_seed: 2024,
            train_patches: 64,
            eval_patches: 16,
            patch_size: 32,
            extra_splits: vec![SplitRatio::QUARTER, SplitRatio::HALF],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub split: SplitRatio,
    pub params: u64,
    /// `(miou, oa, f1)` per seed.
    pub per_seed: Vec<(f64, f64, f64)>,
}

impl AblationRow {
    fn mean(&self, f: impl Fn(&(f64, f64, f64)) -> f64) -> f64 {
        self.per_seed.iter().map(f).sum::<f64>() / self.per_seed.len().max(1) as f64
    }

    pub fn mean_miou(&self) -> f64 {
        self.mean(|r| r.0)
    }

    pub fn mean_oa(&self) -> f64 {
        self.mean(|r| r.1)
    }

    pub fn mean_f1(&self) -> f64 {
        self.mean(|r| r.2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn find(&self, ablation: Ablation, split: SplitRatio) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.ablation == ablation && r.split == split)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<26} {:>5} {:>9} {:>8} {:>8} {:>8}  per-seed miou", "components", "split", "params", "miou", "oa", "f1")?;
        for r in &self.rows {
            let seeds: Vec<String> = r.per_seed.iter().map(|s| format!("{:.4}", s.0)).collect();
            writeln!(
                f,
                "{:<26} {:>5} {:>9} {:>8.4} {:>8.4} {:>8.4}  {}",
                r.ablation.label(),
                r.split.to_string(),
                r.params,
                r.mean_miou(),
                r.mean_oa(),
                r.mean_f1(),
                seeds.join(" ")
            )?;
        }
        Ok(())
    }
}

/// Train set and held-out set of the benchmark.
pub fn benchmark_data(cfg: &AblationConfig) -> Result<(Dataset, Dataset)> {
    let all = synthesize(&SynthConfig {
        seed: cfg.data_seed,
        count: cfg.train_patches + cfg.eval_patches,
        size: cfg.patch_size,
        ..SynthConfig::default()
    })?;
    let mut samples = all.samples;
    let held_out = samples.split_off(cfg.train_patches);
    Ok((Dataset::new(samples)?, Dataset::new(held_out)?))
}

/// Trains one configuration per seed and scores it on the held-out set.
pub fn run_variant(
    cfg: &AblationConfig,
    net: &NetConfig,
    train: &Dataset,
    held_out: &Dataset,
) -> Result<AblationRow> {
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    let mut params = 0;
    for &seed in &cfg.seeds {
        let tc = TrainConfig {
            net: net.clone(),
            seed,
            ..cfg.train.clone()
        };
        let mut t = Trainer::new(tc, train)?;
        t.run(train, None)?;
        params = t.net.param_count();
        let m = evaluate(&t.net, held_out)?.confusion.metrics();
        per_seed.push((m.miou, m.oa, m.f1));
    }
    Ok(AblationRow {
        ablation: net.ablation,
        split: net.split,
        params,
        per_seed,
    })
}

/// All eight component combinations at the template split, then every
/// extra split ratio with all components on.
pub fn run_ablation(cfg: &AblationConfig, mut progress: impl FnMut(&AblationRow)) -> Result<AblationTable> {
    let (train, held_out) = benchmark_data(cfg)?;
    let mut variants: Vec<NetConfig> = Ablation::all_combinations()
        .into_iter()
        .map(|ablation| NetConfig {
            ablation,
            ..cfg.train.net.clone()
        })
        .collect();
    for &split in &cfg.extra_splits {
        if split != cfg.train.net.split {
            variants.push(NetConfig {
                split,
                ablation: Ablation::default(),
                ..cfg.train.net.clone()
            });
        }
    }
    let mut rows = Vec::with_capacity(variants.len());
    for net in &variants {
        let row = run_variant(cfg, net, &train, &held_out)?;
        progress(&row);
        rows.push(row);
    }
    Ok(AblationTable { rows })
}
