//! Network configuration: per-stage widths, depths and attention settings,
//! the spectral/SAR channel split and the ablation switches.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of multispectral input bands.
pub const SPEC_BANDS: usize = 10;
/// Number of SAR input bands (VV, VH).
pub const SAR_BANDS: usize = 2;
/// Land-cover classes in the default task.
pub const NUM_CLASSES: usize = 9;
/// Epsilon of every layer norm.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub channels: usize,
    pub depth: usize,
    pub heads: usize,
    /// Key/value sequence reduction: `N` tokens become `N / reduction`.
    pub reduction: usize,
    pub mlp_ratio: usize,
}

/// Share of each stage's channels given to the spectral branch, kept as an
/// exact fraction so that `3/4` splits round predictably.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitRatio {
    pub num: u32,
    pub den: u32,
}

impl SplitRatio {
    pub const THREE_QUARTERS: SplitRatio = SplitRatio { num: 3, den: 4 };
    pub const HALF: SplitRatio = SplitRatio { num: 1, den: 2 };
    pub const QUARTER: SplitRatio = SplitRatio { num: 1, den: 4 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num == 0 || num >= den {
            return Err(Error::Config(format!("split ratio {num}/{den} must lie strictly between 0 and 1")));
        }
        Ok(SplitRatio { num, den })
    }

    /// `(spectral, sar)` widths: the spectral branch gets `ceil(ratio * channels)`.
    pub fn split(self, channels: usize) -> (usize, usize) {
        let (n, d) = (self.num as usize, self.den as usize);
        let spec = (n * channels).div_ceil(d);
        (spec, channels - spec.min(channels))
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    /// Accepts `a/b` or a decimal such as `0.75`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse split ratio {s:?}"));
        if let Some((a, b)) = s.split_once('/') {
            let num = a.trim().parse().map_err(|_| bad())?;
            let den = b.trim().parse().map_err(|_| bad())?;
            return SplitRatio::new(num, den);
        }
        let v: f64 = s.parse().map_err(|_| bad())?;
        // decimals are snapped to the nearest 1/1000
        let num = (v * 1000.0).round();
        if !(num > 0.0 && num < 1000.0) {
            return Err(bad());
        }
        let g = gcd(num as u32, 1000);
        SplitRatio::new(num as u32 / g, 1000 / g)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Component switches for ablation runs. All on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub cross_attention: bool,
    /// Off forces the self-attention reduction ratio to 1.
    pub efficient_sa: bool,
    /// Off replaces gated fusion with plain concatenation.
    pub mmam: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            cross_attention: true,
            efficient_sa: true,
            mmam: true,
        }
    }
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        cross_attention: false,
        efficient_sa: false,
        mmam: false,
    };

    /// The eight on/off combinations, baseline first and full model last.
    pub fn all_combinations() -> [Ablation; 8] {
        let a = |c, e, m| Ablation {
            cross_attention: c,
            efficient_sa: e,
            mmam: m,
        };
        [
            a(false, false, false),
            a(true, false, false),
            a(false, true, false),
            a(false, false, true),
            a(false, true, true),
            a(true, false, true),
            a(true, true, false),
            a(true, true, true),
        ]
    }

    pub fn label(&self) -> String {
        let mark = |b: bool| if b { "x" } else { "-" };
        format!(
            "CA={} EffSA={} MMAM={}",
            mark(self.cross_attention),
            mark(self.efficient_sa),
            mark(self.mmam)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub spec_bands: usize,
    pub sar_bands: usize,
    pub stages: [StageConfig; 4],
    pub split: SplitRatio,
    pub decoder_channels: usize,
    pub num_classes: usize,
    /// Squeeze factor of the fusion gate MLPs.
    pub gate_reduction: usize,
    pub ablation: Ablation,
}

impl NetConfig {
    /// Small configuration used for CPU training and tests.
    pub fn desk() -> Self {
        let st = |channels, heads, reduction| StageConfig {
            channels,
            depth: 2,
            heads,
            reduction,
            mlp_ratio: 4,
        };
        NetConfig {
            spec_bands: SPEC_BANDS,
            sar_bands: SAR_BANDS,
            stages: [st(16, 1, 8), st(32, 2, 4), st(48, 3, 2), st(64, 4, 1)],
            split: SplitRatio::THREE_QUARTERS,
            decoder_channels: 64,
            num_classes: NUM_CLASSES,
            gate_reduction: 4,
            ablation: Ablation::default(),
        }
    }

    /// Full-size reconstruction, used for parameter and FLOP counting.
    /// Reductions are the B2 spatial ratios (8, 4, 2, 1) squared, since here
    /// the ratio applies to the token sequence.
    pub fn full_size() -> Self {
        let st = |channels, depth, heads, reduction| StageConfig {
            channels,
            depth,
            heads,
            reduction,
            mlp_ratio: 4,
        };
        NetConfig {
            spec_bands: SPEC_BANDS,
            sar_bands: SAR_BANDS,
            stages: [st(64, 3, 1, 64), st(128, 4, 2, 16), st(320, 6, 5, 4), st(512, 3, 8, 1)],
            split: SplitRatio::THREE_QUARTERS,
            decoder_channels: 768,
            num_classes: NUM_CLASSES,
            gate_reduction: 4,
            ablation: Ablation::default(),
        }
    }

    /// `(spectral, sar)` channel widths of stage `i`.
    pub fn branch_channels(&self, i: usize) -> (usize, usize) {
        self.split.split(self.stages[i].channels)
    }

    /// Reduction ratio actually used by self-attention in stage `i`.
    pub fn self_attention_reduction(&self, i: usize) -> usize {
        if self.ablation.efficient_sa {
            self.stages[i].reduction
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.spec_bands == 0 || self.sar_bands == 0 {
            return cfg("both modalities need at least one band".into());
        }
        if !(1..=NUM_CLASSES).contains(&self.num_classes) {
            return cfg(format!("num_classes must be in 1..={NUM_CLASSES}, got {}", self.num_classes));
        }
        if self.decoder_channels == 0 || self.gate_reduction == 0 {
            return cfg("decoder_channels and gate_reduction must be positive".into());
        }
        for (i, st) in self.stages.iter().enumerate() {
            let (cs, ca) = self.branch_channels(i);
            if cs == 0 || ca == 0 {
                return cfg(format!(
                    "stage {}: split {} of {} channels leaves an empty branch",
                    i + 1,
                    self.split,
                    st.channels
                ));
            }
            if st.heads == 0 || cs % st.heads != 0 || ca % st.heads != 0 {
                return cfg(format!(
                    "stage {}: {} heads must divide both branch widths ({cs}, {ca})",
                    i + 1,
                    st.heads
                ));
            }
            if st.reduction == 0 || st.mlp_ratio == 0 {
                return cfg(format!("stage {}: reduction and mlp_ratio must be >= 1", i + 1));
            }
        }
        Ok(())
    }

    /// Token-grid side lengths `(h_i, w_i)` of the four stages for an `h x w` input.
    pub fn stage_grids(&self, h: usize, w: usize) -> Result<[(usize, usize); 4]> {
        use dualseg_tensor::conv_out_extent;
        let too_small = || Error::Config(format!("input {h}x{w} is too small for the patch embeddings"));
        let mut g = [(0, 0); 4];
        let first = |e| conv_out_extent(e, 7, 4, 3).ok_or_else(too_small);
        g[0] = (first(h)?, first(w)?);
        for i in 1..4 {
            let next = |e| conv_out_extent(e, 3, 2, 1).ok_or_else(too_small);
            g[i] = (next(g[i - 1].0)?, next(g[i - 1].1)?);
        }
        Ok(g)
    }

    /// Rejects inputs whose token counts are not divisible by the reduction ratios.
    pub fn validate_input(&self, h: usize, w: usize) -> Result<[(usize, usize); 4]> {
        self.validate()?;
        let grids = self.stage_grids(h, w)?;
        for (i, &(gh, gw)) in grids.iter().enumerate() {
            let n = gh * gw;
            let r = self.stages[i].reduction;
            let uses_r = self.ablation.efficient_sa || self.ablation.cross_attention;
            if uses_r && n % r != 0 {
                return Err(Error::Config(format!(
                    "stage {}: {n} tokens ({gh}x{gw}) not divisible by reduction ratio {r} for a {h}x{w} input",
                    i + 1
                )));
            }
        }
        Ok(grids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_split_of_64() {
        assert_eq!(SplitRatio::THREE_QUARTERS.split(64), (48, 16));
        assert_eq!(SplitRatio::THREE_QUARTERS.split(16), (12, 4));
        assert_eq!(SplitRatio::QUARTER.split(16), (4, 12));
        assert_eq!(SplitRatio::HALF.split(48), (24, 24));
        // ceil for the spectral side
        assert_eq!(SplitRatio::THREE_QUARTERS.split(10), (8, 2));
    }

    #[test]
    fn parse_ratios() {
        assert_eq!("3/4".parse::<SplitRatio>().unwrap(), SplitRatio::THREE_QUARTERS);
        assert_eq!("0.75".parse::<SplitRatio>().unwrap(), SplitRatio::THREE_QUARTERS);
        assert_eq!("0.5".parse::<SplitRatio>().unwrap(), SplitRatio::HALF);
        assert!("1/1".parse::<SplitRatio>().is_err());
        assert!("abc".parse::<SplitRatio>().is_err());
    }

    #[test]
    fn desk_and_full_configs_validate() {
        NetConfig::desk().validate().unwrap();
        NetConfig::full_size().validate().unwrap();
        for r in [SplitRatio::QUARTER, SplitRatio::HALF] {
            NetConfig { split: r, ..NetConfig::desk() }.validate().unwrap();
        }
    }

    #[test]
    fn desk_branch_widths() {
        let c = NetConfig::desk();
        let w: Vec<_> = (0..4).map(|i| c.branch_channels(i)).collect();
        assert_eq!(w, vec![(12, 4), (24, 8), (36, 12), (48, 16)]);
    }

    #[test]
    fn heads_must_divide_branches() {
        let mut c = NetConfig::desk();
        c.stages[2].heads = 5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn grids_halve() {
        let c = NetConfig::desk();
        assert_eq!(c.stage_grids(64, 64).unwrap(), [(16, 16), (8, 8), (4, 4), (2, 2)]);
        assert_eq!(c.stage_grids(510, 510).unwrap()[0], (128, 128));
        for h in [32, 96, 128, 224] {
            let g = c.stage_grids(h, h).unwrap();
            assert_eq!(g.map(|x| x.0), [h / 4, h / 8, h / 16, h / 32]);
        }
    }

    #[test]
    fn indivisible_tokens_rejected() {
        let c = NetConfig::desk();
        assert!(c.validate_input(32, 32).is_ok());
        // 40x40 -> stage 1 has 10x10 = 100 tokens, not divisible by 8
        assert!(matches!(c.validate_input(40, 40), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_grid_is_complete() {
        let all = Ablation::all_combinations();
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 8);
        assert_eq!(all[0], Ablation::NONE);
        assert_eq!(all[7], Ablation::default());
    }
}
