//! Confusion-matrix based segmentation metrics.

use std::ops::AddAssign;

use crate::error::{Error, Result};

/// `counts[truth][pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `None` for classes absent from both truth and prediction.
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub oa: f64,
    pub f1: f64,
}

impl ConfusionMatrix {
    pub fn new(n_cls: usize) -> Self {
        ConfusionMatrix {
            n: n_cls,
            counts: vec![0; n_cls * n_cls],
        }
    }

    pub fn from_counts(n_cls: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n_cls * n_cls {
            return Err(Error::Data(format!("{} counts for {n_cls} classes", counts.len())));
        }
        Ok(ConfusionMatrix { n: n_cls, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            let (p, t) = (p as usize, t as usize);
            if p >= self.n || t >= self.n {
                return Err(Error::Data(format!("class {} out of range for {} classes", p.max(t), self.n)));
            }
            self.counts[t * self.n + p] += 1;
        }
        Ok(())
    }

    /// `(tp, fp, fn)` of class `c`.
    pub fn class_counts(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let row: u64 = (0..self.n).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..self.n).map(|t| self.get(t, c)).sum();
        (tp, col - tp, row - tp)
    }

    pub fn metrics(&self) -> Metrics {
        let mut iou = Vec::with_capacity(self.n);
        let mut f1s = Vec::new();
        for c in 0..self.n {
            let (tp, fp, fn_) = self.class_counts(c);
            let denom = tp + fp + fn_;
            iou.push((denom > 0).then(|| tp as f64 / denom as f64));
            if tp + fn_ > 0 {
                // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn)
                f1s.push(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
            }
        }
        let scored: Vec<f64> = iou.iter().flatten().copied().collect();
        let total = self.total();
        let trace: u64 = (0..self.n).map(|c| self.get(c, c)).sum();
        Metrics {
            miou: mean(&scored),
            oa: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            f1: mean(&f1s),
            iou,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.n, rhs.n, "confusion matrices of different class counts");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_pixel_example() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        let m = cm.metrics();
        assert_eq!(m.iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((m.miou - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(m.oa, 0.75);
    }

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(9);
        let l: Vec<u8> = (0..90).map(|i| (i % 4) as u8).collect();
        cm.accumulate(&l, &l).unwrap();
        let m = cm.metrics();
        assert_eq!((m.miou, m.oa, m.f1), (1.0, 1.0, 1.0));
        assert_eq!(m.iou[5], None);
    }

    #[test]
    fn out_of_range_and_length_errors() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&[2], &[0]).is_err());
        assert!(cm.accumulate(&[0, 1], &[0]).is_err());
    }
}
