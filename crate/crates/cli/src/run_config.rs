//! Run configuration: `[section]` headers and `key = value` lines.
//! Every key has a default; unknown sections and keys are rejected.
//! `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dualseg_core::ablation::AblationConfig;
use dualseg_core::config::{Ablation, NetConfig, SplitRatio, StageConfig};
use dualseg_core::train::TrainConfig;
use dualseg_core::{Error, LossKind, Result};

/// Every accepted `section.key`, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("run.seed", "seed for initialisation, shuffling and augmentation (0)"),
    ("data.dir", "output directory of `synth` (data)"),
    ("data.manifest", "training manifest (<data.dir>/manifest.txt)"),
    ("data.eval_manifest", "evaluation manifest (data.manifest)"),
    ("data.count", "patches written by `synth` (16)"),
    ("data.size", "patch side length in pixels (64)"),
    ("data.n_classes", "classes used by the scene generator (9)"),
    ("data.window_days", "SAR compositing window in days (360)"),
    ("model.preset", "desk or full; applied before the other model keys (desk)"),
    ("model.channels", "four stage widths (16,32,48,64)"),
    ("model.depths", "four block counts (2,2,2,2)"),
    ("model.heads", "four head counts (1,2,3,4)"),
    ("model.reductions", "four key/value sequence reductions (8,4,2,1)"),
    ("model.mlp_ratio", "Mix-FFN expansion (4)"),
    ("model.split", "spectral share of channels, a/b or decimal (3/4)"),
    ("model.decoder_channels", "unified decoder width (64)"),
    ("model.num_classes", "output classes (9)"),
    ("model.gate_reduction", "fusion gate squeeze factor (4)"),
    ("model.cross_attention", "bidirectional cross-attention on/off (true)"),
    ("model.efficient_sa", "key/value reduction in self-attention on/off (true)"),
    ("model.mmam", "gated fusion on/off; off concatenates (true)"),
    ("train.epochs", "passes over the training set (20)"),
    ("train.batch_size", "patches per step (4)"),
    ("train.lr", "initial learning rate of the cosine schedule (0.0005)"),
    ("train.weight_decay", "decoupled AdamW weight decay (0.01)"),
    ("train.loss", "focal, ce or bce (focal)"),
    ("train.gamma", "focal focusing exponent (2)"),
    ("train.balanced_alpha", "inverse-frequency class weights for focal loss (true)"),
    ("train.augment", "random 90-degree rotations and flips (false)"),
    ("train.out", "directory for checkpoint.ssfw and loss.log (run)"),
    ("eval.checkpoint", "checkpoint read by eval and infer (<train.out>/checkpoint.ssfw)"),
    ("infer.patch", "input patch for infer"),
    ("infer.out", "output label file for infer (prediction.dwpx)"),
    ("count.height", "input height for counting (510)"),
    ("count.width", "input width for counting (510)"),
    ("gradcheck.size", "network input side for the end-to-end check (32)"),
    ("gradcheck.coords", "probed coordinates per parameter tensor (4)"),
    ("gradcheck.network_step", "finite-difference step of the end-to-end check (1e-4)"),
    ("gradcheck.tolerance", "maximum relative error (1e-4)"),
    ("ablate.seeds", "training seeds (0,1,2)"),
    ("ablate.data_seed", "benchmark data seed (2024)"),
    ("ablate.train_patches", "benchmark training patches (64)"),
    ("ablate.eval_patches", "benchmark held-out patches (16)"),
    ("ablate.patch_size", "benchmark patch side (32)"),
    ("ablate.epochs", "epochs per run (12)"),
    ("ablate.lr", "initial learning rate per run (0.002)"),
    ("ablate.extra_splits", "split ratios run with all components on (1/4,1/2)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub count: usize,
    pub size: usize,
    pub n_classes: usize,
    pub window_days: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSection {
    pub size: usize,
    pub coords: usize,
    /// Op and module checks use 1e-5; through the whole network roundoff
    /// at that step exceeds the tolerance on near-zero gradients.
    pub network_step: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub infer_patch: Option<PathBuf>,
    pub infer_out: PathBuf,
    pub count_input: (usize, usize),
    pub gradcheck: GradcheckSection,
    pub ablate: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataSection {
                dir: PathBuf::from("data"),
                manifest: None,
                eval_manifest: None,
                count: 16,
                size: 64,
                n_classes: 9,
                window_days: 360,
            },
            train: TrainConfig::default(),
            out: PathBuf::from("run"),
            checkpoint: None,
            infer_patch: None,
            infer_out: PathBuf::from("prediction.dwpx"),
            count_input: (510, 510),
            gradcheck: GradcheckSection {
                size: 32,
                coords: 4,
                network_step: 1e-4,
                tolerance: 1e-4,
            },
            ablate: AblationConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

/// Comma-separated; an empty value is an empty list.
fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_four(key: &str, value: &str) -> Result<[usize; 4]> {
    let v: Vec<usize> = parse_list(key, value)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected four comma-separated values, got {value:?}")))
}

impl RunConfig {
    pub fn manifest(&self) -> PathBuf {
        self.data.manifest.clone().unwrap_or_else(|| self.data.dir.join("manifest.txt"))
    }

    pub fn eval_manifest(&self) -> PathBuf {
        self.data.eval_manifest.clone().unwrap_or_else(|| self.manifest())
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.ssfw"))
    }

    pub fn net(&self) -> &NetConfig {
        &self.train.net
    }

    /// Sets one `section.key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let net = &mut self.train.net;
        let stages = |f: &mut dyn FnMut(&mut StageConfig, usize), vals: [usize; 4], net: &mut NetConfig| {
            for (s, x) in net.stages.iter_mut().zip(vals) {
                f(s, x);
            }
        };
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "data.dir" => self.data.dir = PathBuf::from(v),
            "data.manifest" => self.data.manifest = Some(PathBuf::from(v)),
            "data.eval_manifest" => self.data.eval_manifest = Some(PathBuf::from(v)),
            "data.count" => self.data.count = parse(key, v)?,
            "data.size" => self.data.size = parse(key, v)?,
            "data.n_classes" => self.data.n_classes = parse(key, v)?,
            "data.window_days" => self.data.window_days = parse(key, v)?,
            "model.preset" => {
                let base = match v {
                    "desk" => NetConfig::desk(),
                    "full" => NetConfig::full_size(),
                    _ => return Err(Error::Config(format!("{key}: expected desk or full, got {v:?}"))),
                };
                *net = NetConfig {
                    ablation: net.ablation,
                    ..base
                };
            }
            "model.channels" => stages(&mut |s, x| s.channels = x, parse_four(key, v)?, net),
            "model.depths" => stages(&mut |s, x| s.depth = x, parse_four(key, v)?, net),
            "model.heads" => stages(&mut |s, x| s.heads = x, parse_four(key, v)?, net),
            "model.reductions" => stages(&mut |s, x| s.reduction = x, parse_four(key, v)?, net),
            "model.mlp_ratio" => {
                let r: usize = parse(key, v)?;
                stages(&mut |s, x| s.mlp_ratio = x, [r; 4], net);
            }
            "model.split" => net.split = SplitRatio::from_str(v)?,
            "model.decoder_channels" => net.decoder_channels = parse(key, v)?,
            "model.num_classes" => net.num_classes = parse(key, v)?,
            "model.gate_reduction" => net.gate_reduction = parse(key, v)?,
            "model.cross_attention" => net.ablation.cross_attention = parse_bool(key, v)?,
            "model.efficient_sa" => net.ablation.efficient_sa = parse_bool(key, v)?,
            "model.mmam" => net.ablation.mmam = parse_bool(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.loss" => self.train.loss = LossKind::from_str(v)?,
            "train.gamma" => self.train.gamma = parse(key, v)?,
            "train.balanced_alpha" => self.train.balanced_alpha = parse_bool(key, v)?,
            "train.augment" => self.train.augment = parse_bool(key, v)?,
            "train.out" => self.out = PathBuf::from(v),
            "eval.checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "infer.patch" => self.infer_patch = Some(PathBuf::from(v)),
            "infer.out" => self.infer_out = PathBuf::from(v),
            "count.height" => self.count_input.0 = parse(key, v)?,
            "count.width" => self.count_input.1 = parse(key, v)?,
            "gradcheck.size" => self.gradcheck.size = parse(key, v)?,
            "gradcheck.coords" => self.gradcheck.coords = parse(key, v)?,
            "gradcheck.network_step" => self.gradcheck.network_step = parse(key, v)?,
            "gradcheck.tolerance" => self.gradcheck.tolerance = parse(key, v)?,
            "ablate.seeds" => self.ablate.seeds = parse_list(key, v)?,
            "ablate.data_seed" => self.ablate.data_seed = parse(key, v)?,
            "ablate.train_patches" => self.ablate.train_patches = parse(key, v)?,
            "ablate.eval_patches" => self.ablate.eval_patches = parse(key, v)?,
            "ablate.patch_size" => self.ablate.patch_size = parse(key, v)?,
            "ablate.epochs" => self.ablate.train.epochs = parse(key, v)?,
            "ablate.lr" => self.ablate.train.lr = parse(key, v)?,
            "ablate.extra_splits" => self.ablate.extra_splits = parse_list(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `(key, value)` pairs, model presets first.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "model.preset") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "model.preset") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Final configuration: the run seed and model flow into training and
    /// the ablation template.
    pub fn finish(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.train.net.validate()?;
        let (epochs, lr) = (self.ablate.train.epochs, self.ablate.train.lr);
        self.ablate.train = TrainConfig {
            epochs,
            lr,
            seed: self.seed,
            ..self.train.clone()
        };
        Ok(self)
    }
}

/// `section.key = value` pairs of a config file, in file order.
pub fn parse_file_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |m: String| Error::Config(format!("line {}: {m}", i + 1));
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| at(format!("malformed section header {line:?}")))?;
            let name = name.trim();
            if !KEYS.iter().any(|(k, _)| k.split('.').next() == Some(name)) {
                return Err(at(format!("unknown section [{name}]")));
            }
            section = Some(name.to_owned());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
        let sec = section.as_deref().ok_or_else(|| at("key outside of any [section]".into()))?;
        let key = format!("{sec}.{}", k.trim());
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(at(format!("unknown key {key:?}")));
        }
        out.push((key, v.trim().to_owned()));
    }
    Ok(out)
}

pub fn load_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_file_text(&text)
}

/// Builds a configuration from optional file pairs and command-line
/// overrides, the latter winning.
pub fn build(file: &[(String, String)], overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.apply(file)?;
    cfg.apply(overrides)?;
    cfg.finish()
}

/// Ablation switches as written in reports.
pub fn ablation_flags(a: Ablation) -> String {
    format!(
        "cross_attention={} efficient_sa={} mmam={}",
        a.cross_attention, a.efficient_sa, a.mmam
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let pairs = parse_file_text(
            "# comment\n[run]\nseed = 7\n\n[model]\nsplit = 1/2\nmmam = off\n[train]\nepochs = 3 # short\n",
        )
        .unwrap();
        let cfg = build(&pairs, &[("train.epochs".into(), "5".into())]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.net.split, SplitRatio::HALF);
        assert!(!cfg.train.net.ablation.mmam);
        assert_eq!(cfg.train.epochs, 5);
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        assert!(parse_file_text("[train]\nepoch = 3\n").is_err());
        assert!(parse_file_text("[trian]\n").is_err());
        assert!(parse_file_text("seed = 1\n").is_err());
        assert!(parse_file_text("[run]\nseed\n").is_err());
        assert!(build(&[], &[("train.bogus".into(), "1".into())]).is_err());
    }

    #[test]
    fn preset_applies_first() {
        let pairs = vec![
            ("model.decoder_channels".to_string(), "32".to_string()),
            ("model.preset".to_string(), "full".to_string()),
        ];
        let cfg = build(&pairs, &[]).unwrap();
        assert_eq!(cfg.train.net.stages[3].channels, 512);
        assert_eq!(cfg.train.net.decoder_channels, 32);
    }

    #[test]
    fn every_documented_key_is_settable() {
        let sample = |k: &str| match k {
            "model.preset" => "desk",
            "model.channels" | "model.heads" | "model.reductions" => "16,32,48,64",
            "model.depths" => "1,1,1,1",
            "model.split" => "3/4",
            "train.loss" => "ce",
            "ablate.seeds" => "1,2",
            "ablate.extra_splits" => "1/2",
            k if k.ends_with("lr") || k.ends_with("gamma") || k.ends_with("decay") || k.ends_with("tolerance") || k.ends_with("step") => "0.5",
            k if ["model.cross_attention", "model.efficient_sa", "model.mmam", "train.augment", "train.balanced_alpha"].contains(&k) => "true",
            k if k.contains("dir") || k.contains("manifest") || k.contains("out") || k.contains("checkpoint") || k.contains("patch") && k.starts_with("infer") => "x",
            _ => "4",
        };
        for (k, _) in KEYS {
            let mut cfg = RunConfig::default();
            cfg.set(k, sample(k)).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
