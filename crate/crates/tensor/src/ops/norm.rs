use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tensor::{Op, Tensor};

impl<T: Element> Tensor<T> {
    /// Layer normalization over the trailing axis, then `gamma * x_hat + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let Some(&d) = self.shape().last() else {
            return dim_err("layer_norm", "scalar input");
        };
        if gamma.shape() != [d] || beta.shape() != [d] {
            return dim_err(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must match trailing extent {d}",
                    gamma.shape(),
                    beta.shape()
                ),
            );
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).expect("extent fits");
        let rows = self.numel() / d.max(1);
        let mut xhat = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); self.numel()];
        {
            let (xd, gd, bd) = (self.data(), gamma.data(), beta.data());
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mean = row.iter().fold(T::zero(), |s, &v| s + v) / dn;
                let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / dn;
                let is = T::one() / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let xh = (row[j] - mean) * is;
                    xhat[r * d + j] = xh;
                    out[r * d + j] = gd[j] * xh + bd[j];
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LayerNorm,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |ctx| {
                let (px, pg, pb) = (&ctx.parents[0], &ctx.parents[1], &ctx.parents[2]);
                let g = ctx.grad;
                let gd = pg.data();
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = px.requires_grad().then(|| vec![T::zero(); g.len()]);
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + gr[j] * xr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                        let dxh = gr[j] * gd[j];
                        s1 = s1 + dxh;
                        s2 = s2 + dxh * xr[j];
                    }
                    if let Some(dx) = dx.as_mut() {
                        let (m1, m2) = (s1 / dn, s2 / dn);
                        for j in 0..d {
                            let dxh = gr[j] * gd[j];
                            dx[r * d + j] = inv_std[r] * (dxh - m1 - xr[j] * m2);
                        }
                    }
                }
                vec![
                    dx,
                    pg.requires_grad().then_some(dgamma),
                    pb.requires_grad().then_some(dbeta),
                ]
            }),
        ))
    }
}
