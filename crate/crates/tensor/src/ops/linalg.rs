use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::{broadcast_shapes, broadcast_strides, for_each_broadcast, numel};
use crate::tensor::{Op, Tensor};

/// `c[m,n] += a[m,k] * b[k,n]`
#[inline]
fn gemm_acc<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m,k] += g[m,n] * b[k,n]^T`
#[inline]
fn gemm_nt_acc<T: Element>(g: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                s = s + gv * bv;
            }
            c[i * k + p] = c[i * k + p] + s;
        }
    }
}

/// `c[k,n] += a[m,k]^T * g[m,n]`
#[inline]
fn gemm_tn_acc<T: Element>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv = *cv + av * gv;
            }
        }
    }
}

struct BatchPlan {
    out_batch: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
}

impl BatchPlan {
    fn pairs(&self) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::with_capacity(numel(&self.out_batch).max(1));
        for_each_broadcast(&self.out_batch, &self.a_strides, &self.b_strides, |o, ia, ib| {
            v.push((o, ia, ib))
        });
        v
    }
}

fn plan(a: &[usize], b: &[usize]) -> Result<BatchPlan> {
    let mismatch = || TensorError::Shape {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let out_batch = broadcast_shapes("matmul", ab, bb).map_err(|_| mismatch())?;
    Ok(BatchPlan {
        a_strides: broadcast_strides(ab, &out_batch),
        b_strides: broadcast_strides(bb, &out_batch),
        out_batch,
        m,
        k,
        n,
    })
}

impl<T: Element> Tensor<T> {
    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]` with
    /// broadcasting over the leading dimensions.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let p = plan(self.shape(), rhs.shape())?;
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out_shape = p.out_batch.clone();
        out_shape.extend([m, n]);
        let pairs = p.pairs();
        let mut out = vec![T::zero(); numel(&out_shape)];
        {
            let (ad, bd) = (self.data(), rhs.data());
            for &(o, ia, ib) in &pairs {
                gemm_acc(
                    &ad[ia * m * k..(ia + 1) * m * k],
                    &bd[ib * k * n..(ib + 1) * k * n],
                    &mut out[o * m * n..(o + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Ok(Tensor::from_op(
            out_shape,
            out,
            Op::MatMul,
            vec![self.clone(), rhs.clone()],
            Box::new(move |ctx| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let (ad, bd) = (pa.data(), pb.data());
                let g = ctx.grad;
                let mut ga = pa.requires_grad().then(|| vec![T::zero(); pa.numel()]);
                let mut gb = pb.requires_grad().then(|| vec![T::zero(); pb.numel()]);
                for &(o, ia, ib) in &pairs {
                    let gs = &g[o * m * n..(o + 1) * m * n];
                    if let Some(ga) = ga.as_mut() {
                        let bs = &bd[ib * k * n..(ib + 1) * k * n];
                        gemm_nt_acc(gs, bs, &mut ga[ia * m * k..(ia + 1) * m * k], m, k, n);
                    }
                    if let Some(gb) = gb.as_mut() {
                        let as_ = &ad[ia * m * k..(ia + 1) * m * k];
                        gemm_tn_acc(as_, gs, &mut gb[ib * k * n..(ib + 1) * k * n], m, k, n);
                    }
                }
                vec![ga, gb]
            }),
        ))
    }
}
