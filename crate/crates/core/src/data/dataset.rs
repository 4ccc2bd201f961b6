//! In-memory datasets, synthetic dataset generation and batching.

use std::fs;
use std::path::{Path, PathBuf};

use dualseg_tensor::{SplitMix64, Tensor};
use rand_core::RngCore;

use super::format::{read_manifest, read_patch, write_manifest, write_patch};
use super::scene::{generate_scene, PatchSample};
use crate::config::{NUM_CLASSES, SAR_BANDS, SPEC_BANDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Patches to keep; discarded scenes are replaced.
    pub count: usize,
    pub size: usize,
    pub n_classes: usize,
    pub window_days: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            count: 16,
            size: 64,
            n_classes: NUM_CLASSES,
            window_days: 360,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub samples: Vec<PatchSample>,
    /// Scenes dropped for lack of SAR in the compositing window.
    pub discarded: usize,
}

/// Seed of scene `index` in a dataset seeded with `seed`.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    SplitMix64::derive(seed, index).next_u64()
}

pub fn synthesize(cfg: &SynthConfig) -> Result<SynthOutcome> {
    if cfg.window_days == 0 {
        return Err(Error::Config("compositing window must be positive".into()));
    }
    let mut samples = Vec::with_capacity(cfg.count);
    let mut discarded = 0;
    let mut index = 0u64;
    while samples.len() < cfg.count {
        let scene = generate_scene(scene_seed(cfg.seed, index), cfg.size, cfg.n_classes)?;
        match scene.into_sample(cfg.window_days, format!("synth-{:016x}-{index:06}", cfg.seed)) {
            Some(s) => samples.push(s),
            None => discarded += 1,
        }
        index += 1;
        if discarded > 1000 + 100 * cfg.count {
            return Err(Error::Config(format!(
                "window of {} days discards nearly every scene",
                cfg.window_days
            )));
        }
    }
    Ok(SynthOutcome { samples, discarded })
}

/// Writes `patch_NNNNN.dwpx` files plus `manifest.txt`; returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[PatchSample]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("patch_{i:05}.dwpx");
        write_patch(s, &dir.join(&name))?;
        entries.push(name);
    }
    let manifest = dir.join("manifest.txt");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PatchSample>,
}

impl Dataset {
    pub fn new(samples: Vec<PatchSample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            for s in &samples {
                s.validate()?;
                if s.size != first.size {
                    return Err(Error::Data(format!(
                        "patch {} is {}x{}, dataset uses {}x{}",
                        s.patch_id, s.size, s.size, first.size, first.size
                    )));
                }
            }
        }
        Ok(Dataset { samples })
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let samples = read_manifest(manifest)?
            .iter()
            .map(|p| read_patch(p))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.samples.first().map(|s| s.size)
    }

    pub fn class_histogram(&self, n_cls: usize) -> Vec<u64> {
        let mut h = vec![0u64; n_cls];
        for s in &self.samples {
            for &l in &s.labels {
                if (l as usize) < n_cls {
                    h[l as usize] += 1;
                }
            }
        }
        h
    }

    /// Stacks the listed samples, each optionally transformed.
    pub fn batch(&self, indices: &[usize], augment: Option<&mut SplitMix64>) -> Result<Batch> {
        let mut aug = augment;
        let mut items = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Data(format!("sample index {i} out of range")))?;
            let t = match aug.as_deref_mut() {
                Some(rng) => Transform {
                    rotations: rng.below(4) as u8,
                    flip: rng.below(2) == 1,
                },
                None => Transform::IDENTITY,
            };
            items.push(t.apply(s));
        }
        Batch::stack(&items)
    }
}

/// Rotation by a multiple of 90 degrees followed by an optional
/// left-right flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub rotations: u8,
    pub flip: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rotations: 0,
        flip: false,
    };

    /// Source index for output pixel `(y, x)` of an `s x s` plane.
    fn source(self, y: usize, x: usize, s: usize) -> usize {
        let x = if self.flip { s - 1 - x } else { x };
        // counter-clockwise rotation: out(y, x) = in(x, s-1-y)
        let (mut sy, mut sx) = (y, x);
        for _ in 0..self.rotations % 4 {
            (sy, sx) = (sx, s - 1 - sy);
        }
        sy * s + sx
    }

    fn plane<V: Copy>(self, src: &[V], s: usize, dst: &mut Vec<V>) {
        for y in 0..s {
            for x in 0..s {
                dst.push(src[self.source(y, x, s)]);
            }
        }
    }

    pub fn apply(self, sample: &PatchSample) -> PatchSample {
        if self == Transform::IDENTITY {
            return sample.clone();
        }
        let s = sample.size;
        let n = s * s;
        let mut spec = Vec::with_capacity(sample.spec.len());
        for b in sample.spec.chunks_exact(n) {
            self.plane(b, s, &mut spec);
        }
        let mut sar = Vec::with_capacity(sample.sar.len());
        for b in sample.sar.chunks_exact(n) {
            self.plane(b, s, &mut sar);
        }
        let mut labels = Vec::with_capacity(n);
        self.plane(&sample.labels, s, &mut labels);
        PatchSample {
            size: s,
            spec,
            sar,
            labels,
            patch_id: sample.patch_id.clone(),
        }
    }
}

/// Network-ready tensors for a set of equally sized patches.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub spec: Tensor<f32>,
    pub sar: Tensor<f32>,
    /// `[b, S, S]` flattened.
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn stack(samples: &[PatchSample]) -> Result<Batch> {
        let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let s = first.size;
        let b = samples.len();
        let mut spec = Vec::with_capacity(b * SPEC_BANDS * s * s);
        let mut sar = Vec::with_capacity(b * SAR_BANDS * s * s);
        let mut labels = Vec::with_capacity(b * s * s);
        for p in samples {
            if p.size != s {
                return Err(Error::Data("patches of different sizes in one batch".into()));
            }
            spec.extend_from_slice(&p.spec);
            sar.extend_from_slice(&p.sar);
            labels.extend_from_slice(&p.labels);
        }
        Ok(Batch {
            size: s,
            spec: Tensor::from_vec(&[b, SPEC_BANDS, s, s], spec)?,
            sar: Tensor::from_vec(&[b, SAR_BANDS, s, s], sar)?,
            labels,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.spec.shape()[0]
    }
}
