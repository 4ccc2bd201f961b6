//! Seeded synthetic scenes: Voronoi label maps, class-dependent spectral
//! signatures and speckled SAR time series.

use dualseg_tensor::SplitMix64;
use rand_distr::{Distribution, Gamma};

use crate::config::{NUM_CLASSES, SAR_BANDS, SPEC_BANDS};
use crate::error::{Error, Result};

/// Mean reflectance per class and band. Trees/flooded vegetation and
/// built-up/bare ground are close spectrally and are told apart by SAR.
pub const SPECTRAL_SIGNATURES: [[f32; SPEC_BANDS]; NUM_CLASSES] = [
    [0.20, 0.22, 0.18, 0.16, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15],
    [0.18, 0.22, 0.17, 0.30, 0.50, 0.58, 0.62, 0.62, 0.38, 0.22],
    [0.22, 0.28, 0.22, 0.38, 0.52, 0.56, 0.58, 0.58, 0.48, 0.34],
    [0.17, 0.21, 0.16, 0.28, 0.47, 0.54, 0.58, 0.58, 0.34, 0.20],
    [0.24, 0.30, 0.26, 0.40, 0.60, 0.66, 0.70, 0.70, 0.52, 0.38],
    [0.26, 0.30, 0.32, 0.40, 0.46, 0.50, 0.52, 0.52, 0.56, 0.46],
    [0.40, 0.42, 0.45, 0.46, 0.47, 0.48, 0.49, 0.49, 0.55, 0.50],
    [0.42, 0.44, 0.48, 0.50, 0.52, 0.53, 0.54, 0.54, 0.60, 0.55],
    [0.85, 0.84, 0.82, 0.80, 0.78, 0.76, 0.74, 0.73, 0.20, 0.18],
];

/// Std of the additive noise on every spectral band.
pub const SPECTRAL_NOISE: f32 = 0.04;

/// Mean linear backscatter `(VV, VH)` per class.
pub const SAR_BASE: [[f32; SAR_BANDS]; NUM_CLASSES] = [
    [0.010, 0.002],
    [0.120, 0.030],
    [0.060, 0.012],
    [0.400, 0.060],
    [0.090, 0.020],
    [0.080, 0.016],
    [0.500, 0.080],
    [0.040, 0.006],
    [0.050, 0.010],
];

/// Equivalent number of looks of the speckle model.
pub const SPECKLE_LOOKS: f64 = 4.0;

/// One bimodal example. Bands are planar, row-major `[bands, size, size]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub size: usize,
    pub spec: Vec<f32>,
    pub sar: Vec<f32>,
    pub labels: Vec<u8>,
    pub patch_id: String,
}

impl PatchSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.size * self.size;
        if self.spec.len() != SPEC_BANDS * n || self.sar.len() != SAR_BANDS * n || self.labels.len() != n {
            return Err(Error::Data(format!(
                "patch {}: band or label plane sizes do not match {}x{}",
                self.patch_id, self.size, self.size
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Data(format!("patch {}: label {l} out of range", self.patch_id)));
        }
        Ok(())
    }
}

/// SAR acquisitions relative to the optical date, offsets sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SarTimeSeries {
    pub size: usize,
    pub observations: Vec<Vec<f32>>,
    pub day_offsets: Vec<i32>,
}

impl SarTimeSeries {
    /// One speckled frame of `base` (`[2, size, size]`) per offset.
    pub fn speckled(base: &[f32], size: usize, mut day_offsets: Vec<i32>, rng: &mut SplitMix64) -> Self {
        day_offsets.sort_unstable();
        let gamma = Gamma::new(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS).expect("valid gamma parameters");
        let observations = day_offsets
            .iter()
            .map(|_| base.iter().map(|&b| b * gamma.sample(rng) as f32).collect())
            .collect();
        SarTimeSeries {
            size,
            observations,
            day_offsets,
        }
    }
}

/// Mean of the observations with `|offset| <= window_days / 2`, or `None`
/// when the window holds no observation.
pub fn composite_sar(series: &SarTimeSeries, window_days: u32) -> Option<Vec<f32>> {
    let half = f64::from(window_days) / 2.0;
    let mut picked: Vec<(i32, &Vec<f32>)> = series
        .observations
        .iter()
        .zip(&series.day_offsets)
        .filter(|(_, &d)| f64::from(d).abs() <= half)
        .map(|(o, &d)| (d, o))
        .collect();
    // a canonical summation order makes the mean independent of the order
    // the observations were supplied in
    picked.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| a.1.iter().map(|v| v.to_bits()).cmp(b.1.iter().map(|v| v.to_bits())))
    });
    let first = picked.first()?.1;
    let mut acc = vec![0.0f64; first.len()];
    for (_, o) in &picked {
        for (a, &v) in acc.iter_mut().zip(o.iter()) {
            *a += f64::from(v);
        }
    }
    let n = picked.len() as f64;
    Some(acc.iter().map(|a| (a / n) as f32).collect())
}

/// A generated scene before compositing.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub spec: Vec<f32>,
    pub labels: Vec<u8>,
    pub series: SarTimeSeries,
}

impl Scene {
    /// Composites the SAR series; `None` when the patch must be discarded.
    pub fn into_sample(self, window_days: u32, patch_id: String) -> Option<PatchSample> {
        let sar = composite_sar(&self.series, window_days)?;
        Some(PatchSample {
            size: self.size,
            spec: self.spec,
            sar,
            labels: self.labels,
            patch_id,
        })
    }
}

/// Voronoi partition into `n_classes` classes with class-dependent imagery.
pub fn generate_scene(seed: u64, size: usize, n_classes: usize) -> Result<Scene> {
    if size < 16 {
        return Err(Error::Config(format!("scene size must be at least 16, got {size}")));
    }
    if size > u16::MAX as usize {
        return Err(Error::Config(format!("scene size {size} exceeds {}", u16::MAX)));
    }
    if !(1..=NUM_CLASSES).contains(&n_classes) {
        return Err(Error::Config(format!("n_classes must be in 1..={NUM_CLASSES}, got {n_classes}")));
    }
    let mut rng = SplitMix64::new(seed);
    let n = size * size;
    let n_sites = (n / 256).max(4);
    // rarer classes get proportionally fewer sites
    let weights: Vec<f64> = (0..n_classes).map(|c| 1.0 / (c + 1) as f64).collect();
    let wsum: f64 = weights.iter().sum();
    let sites: Vec<(f64, f64, u8)> = (0..n_sites)
        .map(|_| {
            let y = rng.uniform() * size as f64;
            let x = rng.uniform() * size as f64;
            let mut u = rng.uniform() * wsum;
            let mut class = n_classes - 1;
            for (c, w) in weights.iter().enumerate() {
                if u < *w {
                    class = c;
                    break;
                }
                u -= w;
            }
            (y, x, class as u8)
        })
        .collect();
    let mut labels = Vec::with_capacity(n);
    for py in 0..size {
        for px in 0..size {
            let (cy, cx) = (py as f64 + 0.5, px as f64 + 0.5);
            let nearest = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - cy).powi(2) + (a.1 - cx).powi(2);
                    let db = (b.0 - cy).powi(2) + (b.1 - cx).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least four sites");
            labels.push(nearest.2);
        }
    }
    let mut spec = vec![0.0f32; SPEC_BANDS * n];
    for band in 0..SPEC_BANDS {
        for (p, &l) in labels.iter().enumerate() {
            let v = SPECTRAL_SIGNATURES[l as usize][band] + SPECTRAL_NOISE * rng.normal() as f32;
            spec[band * n + p] = v.clamp(0.0, 1.0);
        }
    }
    let mut base = vec![0.0f32; SAR_BANDS * n];
    for band in 0..SAR_BANDS {
        for (p, &l) in labels.iter().enumerate() {
            base[band * n + p] = SAR_BASE[l as usize][band];
        }
    }
    let n_obs = if rng.uniform() < 0.1 { 0 } else { 1 + rng.below(12) };
    let offsets: Vec<i32> = (0..n_obs).map(|_| rng.below(361) as i32 - 180).collect();
    let series = SarTimeSeries::speckled(&base, size, offsets, &mut rng);
    Ok(Scene {
        size,
        spec,
        labels,
        series,
    })
}
