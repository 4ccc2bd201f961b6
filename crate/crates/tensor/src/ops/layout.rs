use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::shape::{numel, split_at_axis, strides};
use crate::tensor::{Op, Tensor};

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return dim_err(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            );
        }
        let in_shape = self.shape().to_vec();
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape,
            vec![self.clone()],
            Box::new(move |ctx| {
                debug_assert_eq!(numel(&in_shape), ctx.grad.len());
                vec![Some(ctx.grad.to_vec())]
            }),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return dim_err("permute", format!("{axes:?} is not a permutation of rank {rank}"));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let in_strides = strides(&in_shape);
        // stride in the input for each output axis
        let src: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let gather = permutation_index(&out_shape, &src);
        let data = {
            let xd = self.data();
            gather.iter().map(|&i| xd[i]).collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            Op::Permute,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); ctx.grad.len()];
                for (o, &i) in gather.iter().enumerate() {
                    g[i] = ctx.grad[o];
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return dim_err("transpose", "needs rank >= 2");
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn concat(xs: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let Some(first) = xs.first() else {
            return dim_err("concat", "no inputs");
        };
        let rank = first.rank();
        if axis >= rank {
            return dim_err("concat", format!("axis {axis} out of range for rank {rank}"));
        }
        for x in xs {
            let ok = x.rank() == rank
                && (0..rank).all(|i| i == axis || x.shape()[i] == first.shape()[i]);
            if !ok {
                return dim_err(
                    "concat",
                    format!("{:?} incompatible with {:?} along axis {axis}", x.shape(), first.shape()),
                );
            }
        }
        let lens: Vec<usize> = xs.iter().map(|x| x.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for (x, &l) in xs.iter().zip(&lens) {
                let xd = x.data();
                out.extend_from_slice(&xd[o * l * inner..(o + 1) * l * inner]);
            }
        }
        Ok(Tensor::from_op(
            out_shape,
            out,
            Op::Concat,
            xs.to_vec(),
            Box::new(move |ctx| {
                let mut gs: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (g, &l) in gs.iter_mut().zip(&lens) {
                        g.extend_from_slice(&ctx.grad[pos..pos + l * inner]);
                        pos += l * inner;
                    }
                }
                gs.into_iter()
                    .zip(ctx.parents)
                    .map(|(g, p)| p.requires_grad().then_some(g))
                    .collect()
            }),
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return dim_err(
                "narrow",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, self.shape()),
            );
        }
        let (outer, full, inner) = split_at_axis(self.shape(), axis);
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let data = {
            let xd = self.data();
            let mut v = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                v.extend_from_slice(&xd[base..base + len * inner]);
            }
            v
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            Op::Narrow,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    g[base..base + len * inner]
                        .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Splits along `axis` into pieces of the given extents.
    pub fn split(&self, sizes: &[usize], axis: usize) -> Result<Vec<Tensor<T>>> {
        if axis >= self.rank() {
            return dim_err("split", format!("axis {axis} out of range for {:?}", self.shape()));
        }
        let total: usize = sizes.iter().sum();
        if total != self.shape()[axis] {
            return dim_err(
                "split",
                format!("sizes {sizes:?} sum to {total}, extent is {}", self.shape()[axis]),
            );
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let t = self.narrow(axis, start, s);
                start += s;
                t
            })
            .collect()
    }

    /// Picks `self[i, index[i]]` from a `[rows, cols]` tensor.
    pub fn pick(&self, index: &[usize]) -> Result<Tensor<T>> {
        if self.rank() != 2 || self.shape()[0] != index.len() {
            return dim_err(
                "pick",
                format!("{} indices for shape {:?}", index.len(), self.shape()),
            );
        }
        let cols = self.shape()[1];
        if let Some(&bad) = index.iter().find(|&&i| i >= cols) {
            return dim_err("pick", format!("index {bad} out of range for {cols} columns"));
        }
        let index = index.to_vec();
        let data = {
            let xd = self.data();
            index.iter().enumerate().map(|(r, &c)| xd[r * cols + c]).collect()
        };
        let rows = index.len();
        Ok(Tensor::from_op(
            vec![rows],
            data,
            Op::Pick,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![T::zero(); rows * cols];
                for (r, &c) in index.iter().enumerate() {
                    g[r * cols + c] = ctx.grad[r];
                }
                vec![Some(g)]
            }),
        ))
    }
}

fn permutation_index(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    let mut idx = Vec::with_capacity(n);
    let rank = out_shape.len();
    if rank == 0 {
        return vec![0];
    }
    let mut counter = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        idx.push(pos);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            counter[d] += 1;
            pos += src_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            pos -= src_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    idx
}
