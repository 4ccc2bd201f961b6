use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::shape::{broadcast_strides, for_each_broadcast, numel, split_at_axis};
use crate::tensor::{Op, Tensor};

fn check_axes(op: &'static str, rank: usize, axes: &[usize]) -> Result<()> {
    for (i, &a) in axes.iter().enumerate() {
        if a >= rank || axes[..i].contains(&a) {
            return dim_err(op, format!("invalid axes {axes:?} for rank {rank}"));
        }
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    /// Sums over `axes`. With `keepdim` the reduced axes stay as extent 1.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        check_axes("sum", self.rank(), axes)?;
        let in_shape = self.shape().to_vec();
        let kept: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let mut out = vec![T::zero(); numel(&kept)];
        let ks = broadcast_strides(&kept, &in_shape);
        let zeros = vec![0; in_shape.len()];
        {
            let xd = self.data();
            for_each_broadcast(&in_shape, &ks, &zeros, |i, o, _| out[o] = out[o] + xd[i]);
        }
        let out_shape: Vec<usize> = if keepdim {
            kept.clone()
        } else {
            in_shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            out,
            Op::Sum,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); numel(&in_shape)];
                let ks = broadcast_strides(&kept, &in_shape);
                let zeros = vec![0; in_shape.len()];
                for_each_broadcast(&in_shape, &ks, &zeros, |i, o, _| g[i] = ctx.grad[o]);
                vec![Some(g)]
            }),
        ))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.sum_axes(&axes, false).expect("all axes are valid")
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        let s = self.sum_axes(axes, keepdim)?;
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        Ok(s.mul_scalar(1.0 / count as f64))
    }

    pub fn mean_all(&self) -> Tensor<T> {
        self.sum_all().mul_scalar(1.0 / self.numel() as f64)
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return dim_err("softmax", format!("axis {axis} out of range for {:?}", self.shape()));
        }
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).fold(T::neg_infinity(), |m, j| m.max(out[idx(j)]));
                let mut z = T::zero();
                for j in 0..len {
                    let e = (out[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    z = z + e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / z;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Softmax,
            vec![self.clone()],
            Box::new(move |ctx| {
                let (y, g) = (ctx.out, ctx.grad);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot = (0..len).fold(T::zero(), |s, j| s + g[idx(j)] * y[idx(j)]);
                        for j in 0..len {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return dim_err("log_softmax", format!("axis {axis} out of range for {:?}", self.shape()));
        }
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).fold(T::neg_infinity(), |m, j| m.max(out[idx(j)]));
                let z = (0..len).fold(T::zero(), |s, j| s + (out[idx(j)] - mx).exp());
                let lse = mx + z.ln();
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] - lse;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LogSoftmax,
            vec![self.clone()],
            Box::new(move |ctx| {
                let (y, g) = (ctx.out, ctx.grad);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let gs = (0..len).fold(T::zero(), |s, j| s + g[idx(j)]);
                        for j in 0..len {
                            gx[idx(j)] = g[idx(j)] - y[idx(j)].exp() * gs;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert_eq!(x.softmax(0).unwrap().to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_on_any_axis() {
        let data: Vec<f64> = (0..24).map(|v| ((v * 7) % 11) as f64 - 5.0).collect();
        let x = Tensor::<f64>::from_vec(&[2, 3, 4], data).unwrap();
        for axis in 0..3 {
            let y = x.softmax(axis).unwrap();
            let s = y.sum_axes(&[axis], false).unwrap();
            assert!(s.to_vec().iter().all(|v| (v - 1.0).abs() < 1e-12));
            assert!(y.to_vec().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 100.0]).unwrap();
        let a = x.log_softmax(1).unwrap().to_vec();
        let b = x.softmax(1).unwrap().to_vec();
        for (l, p) in a.iter().zip(&b) {
            if *p > 1e-300 {
                assert!((l - p.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sum_and_mean_shapes() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = x.sum_axes(&[1], false).unwrap();
        assert_eq!(s.shape(), &[2]);
        assert_eq!(s.to_vec(), vec![6., 15.]);
        let m = x.mean_axes(&[0], true).unwrap();
        assert_eq!(m.shape(), &[1, 3]);
        assert_eq!(m.to_vec(), vec![2.5, 3.5, 4.5]);
        assert!(x.sum_axes(&[2], false).is_err());
    }
}
