use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tensor::{Op, Tensor};

/// Source taps for one output coordinate: `(lo, hi, weight_hi)`.
/// Half-pixel centers, edges clamped.
fn taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let w = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, w)
        })
        .collect()
}

impl<T: Element> Tensor<T> {
    /// Bilinear resize of `[b, c, h, w]` to `[b, c, out_h, out_w]`.
    pub fn bilinear_upsample(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || out_h == 0 || out_w == 0 || s[2] == 0 || s[3] == 0 {
            return dim_err(
                "bilinear_upsample",
                format!("cannot resize {s:?} to {out_h}x{out_w}"),
            );
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let ty: Vec<(usize, usize, T)> = taps(out_h, h)
            .into_iter()
            .map(|(a, b, f)| (a, b, T::from_f64_lossy(f)))
            .collect();
        let tx: Vec<(usize, usize, T)> = taps(out_w, w)
            .into_iter()
            .map(|(a, b, f)| (a, b, T::from_f64_lossy(f)))
            .collect();
        let mut out = vec![T::zero(); planes * out_h * out_w];
        {
            let xd = self.data();
            for p in 0..planes {
                let src = &xd[p * h * w..(p + 1) * h * w];
                let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                        let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                        dst[oy * out_w + ox] = top * (T::one() - fy) + bot * fy;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![s[0], s[1], out_h, out_w],
            out,
            Op::Bilinear,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let go = &ctx.grad[p * out_h * out_w..(p + 1) * out_h * out_w];
                    let gi = &mut g[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let v = go[oy * out_w + ox];
                            let (top, bot) = (v * (T::one() - fy), v * fy);
                            gi[y0 * w + x0] = gi[y0 * w + x0] + top * (T::one() - fx);
                            gi[y0 * w + x1] = gi[y0 * w + x1] + top * fx;
                            gi[y1 * w + x0] = gi[y1 * w + x0] + bot * (T::one() - fx);
                            gi[y1 * w + x1] = gi[y1 * w + x1] + bot * fx;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 3.0);
        let y = x.bilinear_upsample(4, 4).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(y.to_vec().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn same_size_is_identity() {
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let x = Tensor::<f64>::from_vec(&[1, 1, 3, 4], data.clone()).unwrap();
        assert_eq!(x.bilinear_upsample(3, 4).unwrap().to_vec(), data);
    }

    #[test]
    fn doubling_interpolates_half_pixel() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
        let y = x.bilinear_upsample(1, 4).unwrap().to_vec();
        assert_eq!(y, vec![0.0, 1.0, 3.0, 4.0]);
    }
}
