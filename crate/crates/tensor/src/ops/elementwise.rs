use crate::element::Element;
use crate::error::Result;
use crate::shape::{broadcast_shapes, broadcast_strides, for_each_broadcast, numel};
use crate::tensor::{Op, Tensor};

/// Sums `grad` (laid out at `out_shape`) down onto `target` shape.
pub(crate) fn reduce_to_shape<T: Element>(grad: &[T], out_shape: &[usize], target: &[usize]) -> Vec<T> {
    if out_shape == target {
        return grad.to_vec();
    }
    let mut acc = vec![T::zero(); numel(target)];
    let ts = broadcast_strides(target, out_shape);
    let zeros = vec![0; out_shape.len()];
    for_each_broadcast(out_shape, &ts, &zeros, |o, it, _| acc[it] = acc[it] + grad[o]);
    acc
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn op(self) -> Op {
        match self {
            Binary::Add => Op::Add,
            Binary::Sub => Op::Sub,
            Binary::Mul => Op::Mul,
            Binary::Div => Op::Div,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, kind: Binary) -> Result<Tensor<T>> {
    let out_shape = broadcast_shapes(kind.name(), a.shape(), b.shape())?;
    let data = {
        let (ad, bd) = (a.data(), b.data());
        if a.shape() == b.shape() {
            ad.iter().zip(bd.iter()).map(|(&x, &y)| kind.apply(x, y)).collect()
        } else {
            let mut out = vec![T::zero(); numel(&out_shape)];
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| out[o] = kind.apply(ad[ia], bd[ib]));
            out
        }
    };
    let shape_for_bw = out_shape.clone();
    Ok(Tensor::from_op(
        out_shape,
        data,
        kind.op(),
        vec![a.clone(), b.clone()],
        Box::new(move |ctx| {
            let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
            let g = ctx.grad;
            let os = &shape_for_bw;
            match kind {
                Binary::Add => vec![
                    pa.requires_grad().then(|| reduce_to_shape(g, os, pa.shape())),
                    pb.requires_grad().then(|| reduce_to_shape(g, os, pb.shape())),
                ],
                Binary::Sub => vec![
                    pa.requires_grad().then(|| reduce_to_shape(g, os, pa.shape())),
                    pb.requires_grad().then(|| {
                        let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                        reduce_to_shape(&neg, os, pb.shape())
                    }),
                ],
                Binary::Mul | Binary::Div => {
                    let (ad, bd) = (pa.data(), pb.data());
                    let sa = broadcast_strides(pa.shape(), os);
                    let sb = broadcast_strides(pb.shape(), os);
                    let mut ga = pa.requires_grad().then(|| vec![T::zero(); pa.numel()]);
                    let mut gb = pb.requires_grad().then(|| vec![T::zero(); pb.numel()]);
                    for_each_broadcast(os, &sa, &sb, |o, ia, ib| {
                        let (x, y) = (ad[ia], bd[ib]);
                        let (dx, dy) = match kind {
                            Binary::Mul => (g[o] * y, g[o] * x),
                            _ => (g[o] / y, -g[o] * x / (y * y)),
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] = ga[ia] + dx;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] = gb[ib] + dy;
                        }
                    });
                    vec![ga, gb]
                }
            }
        }),
    ))
}

fn unary<T: Element>(
    x: &Tensor<T>,
    op: Op,
    f: impl Fn(T) -> T,
    // derivative given (input, output)
    df: impl Fn(T, T) -> T + 'static,
) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        op,
        vec![x.clone()],
        Box::new(move |ctx| {
            let xd = ctx.parents[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(xd.iter().zip(ctx.out))
                .map(|(&g, (&xi, &yi))| g * df(xi, yi))
                .collect();
            vec![Some(g)]
        }),
    )
}

fn c<T: Element>(v: f64) -> T {
    T::from_f64_lossy(v)
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, rhs, Binary::Add)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, rhs, Binary::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, rhs, Binary::Mul)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, rhs, Binary::Div)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s: T = c(s);
        unary(self, Op::AddScalar, move |v| v + s, |_, _| T::one())
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor<T> {
        let s: T = c(s);
        unary(self, Op::MulScalar, move |v| v * s, move |_, _| s)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-1.0)
    }

    /// `x^p` for a constant exponent. `p = 0` yields exact ones with zero gradient.
    pub fn pow_scalar(&self, p: f64) -> Tensor<T> {
        let pt: T = c(p);
        if p == 0.0 {
            return unary(self, Op::PowScalar, |_| T::one(), |_, _| T::zero());
        }
        unary(
            self,
            Op::PowScalar,
            move |v| v.powf(pt),
            move |x, _| pt * x.powf(pt - T::one()),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, Op::Exp, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        unary(self, Op::Ln, |v| v.ln(), |x, _| T::one() / x)
    }

    /// Exact Gaussian-CDF GELU: `x * Phi(x)`.
    pub fn gelu(&self) -> Tensor<T> {
        let half: T = c(0.5);
        let inv_sqrt2: T = c(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi: T = c(0.398_942_280_401_432_7);
        unary(
            self,
            Op::Gelu,
            move |x| half * x * (T::one() + (x * inv_sqrt2).erf()),
            move |x, _| {
                let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                cdf + x * pdf
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, Op::Sigmoid, sigmoid, |_, y| y * (T::one() - y))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        unary(
            self,
            Op::Softplus,
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| sigmoid(x),
        )
    }
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
