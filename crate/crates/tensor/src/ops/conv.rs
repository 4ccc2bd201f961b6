use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::tensor::{Op, Tensor};

/// Geometry of a 2-D convolution (square stride and padding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// `floor((input + 2*pad - kernel) / stride) + 1`, or `None` if the kernel does not fit.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    s: usize,
    p: usize,
}

impl Geom {
    /// Visits every (x index, w index, out index) triple that contributes.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let g = *self;
        for n in 0..g.b {
            for oc in 0..g.cout {
                let grp = oc / g.cout_g;
                let out_base = (n * g.cout + oc) * g.oh * g.ow;
                for icg in 0..g.cin_g {
                    let ic = grp * g.cin_g + icg;
                    let x_base = (n * g.cin + ic) * g.h * g.w;
                    let w_base = ((oc * g.cin_g) + icg) * g.kh * g.kw;
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let wi = w_base + ky * g.kw + kx;
                            for oy in 0..g.oh {
                                let iy = (oy * g.s + ky) as isize - g.p as isize;
                                if iy < 0 || iy >= g.h as isize {
                                    continue;
                                }
                                let xrow = x_base + iy as usize * g.w;
                                let orow = out_base + oy * g.ow;
                                for ox in 0..g.ow {
                                    let ix = (ox * g.s + kx) as isize - g.p as isize;
                                    if ix < 0 || ix >= g.w as isize {
                                        continue;
                                    }
                                    f(xrow + ix as usize, wi, orow + ox);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// 2-D convolution of `self: [b, c_in, h, w]` with `weight: [c_out, c_in/groups, kh, kw]`.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: Conv2dSpec) -> Result<Tensor<T>> {
        const OP: &str = "conv2d";
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return dim_err(OP, format!("expected rank-4 input and weight, got {xs:?} and {ws:?}"));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let groups = spec.groups;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return dim_err(
                OP,
                format!("input {xs:?} and weight {ws:?} inconsistent with groups={groups}"),
            );
        }
        let (Some(oh), Some(ow)) = (
            conv_out_extent(h, kh, spec.stride, spec.padding),
            conv_out_extent(w, kw, spec.stride, spec.padding),
        ) else {
            return dim_err(
                OP,
                format!(
                    "kernel {kh}x{kw} does not fit input {h}x{w} with padding {} and stride {}",
                    spec.padding, spec.stride
                ),
            );
        };
        if let Some(bt) = bias {
            if bt.shape() != [cout] {
                return dim_err(OP, format!("bias shape {:?} does not match {cout} outputs", bt.shape()));
            }
        }
        let g = Geom {
            b,
            cin,
            h,
            w,
            cout,
            cin_g,
            cout_g: cout / groups,
            kh,
            kw,
            oh,
            ow,
            s: spec.stride,
            p: spec.padding,
        };
        let mut out = vec![T::zero(); b * cout * oh * ow];
        {
            let (xd, wd) = (self.data(), weight.data());
            g.for_each_tap(|xi, wi, oi| out[oi] = out[oi] + xd[xi] * wd[wi]);
            if let Some(bt) = bias {
                let bd = bt.data();
                for (i, chunk) in out.chunks_mut(oh * ow).enumerate() {
                    let bv = bd[i % cout];
                    chunk.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bt) = bias {
            parents.push(bt.clone());
        }
        Ok(Tensor::from_op(
            vec![b, cout, oh, ow],
            out,
            Op::Conv2d,
            parents,
            Box::new(move |ctx| {
                let (px, pw) = (&ctx.parents[0], &ctx.parents[1]);
                let grad = ctx.grad;
                let mut gx = px.requires_grad().then(|| vec![T::zero(); px.numel()]);
                let mut gw = pw.requires_grad().then(|| vec![T::zero(); pw.numel()]);
                {
                    let (xd, wd) = (px.data(), pw.data());
                    g.for_each_tap(|xi, wi, oi| {
                        let go = grad[oi];
                        if let Some(gx) = gx.as_mut() {
                            gx[xi] = gx[xi] + go * wd[wi];
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[wi] = gw[wi] + go * xd[xi];
                        }
                    });
                }
                let mut res = vec![gx, gw];
                if let Some(pb) = ctx.parents.get(2) {
                    res.push(pb.requires_grad().then(|| {
                        let mut gb = vec![T::zero(); g.cout];
                        for (i, chunk) in grad.chunks(g.oh * g.ow).enumerate() {
                            let s = chunk.iter().fold(T::zero(), |a, &v| a + v);
                            gb[i % g.cout] = gb[i % g.cout] + s;
                        }
                        gb
                    }));
                }
                res
            }),
        ))
    }
}
