//! Shape arithmetic shared by the kernels.

use crate::error::{Result, TensorError};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::Shape {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `src` when viewed at the (broadcast) shape `out`; broadcast axes get stride 0.
pub fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(src);
    let off = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < off || src[i - off] == 1 {
                0
            } else {
                st[i - off]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
pub fn for_each_broadcast(
    out: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    let last = rank - 1;
    let inner = out[last];
    let (sa, sb) = (a_strides[last], b_strides[last]);
    let mut o = 0;
    while o < n {
        let (mut xa, mut xb) = (ia, ib);
        for _ in 0..inner {
            f(o, xa, xb);
            o += 1;
            xa += sa;
            xb += sb;
        }
        // advance the outer multi-index
        let mut d = last;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            ia += a_strides[d];
            ib += b_strides[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= a_strides[d] * out[d];
            ib -= b_strides[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) block sizes.
pub fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes("t", &[2, 1, 3], &[4, 1]).unwrap(), vec![2, 4, 3]);
        assert_eq!(broadcast_shapes("t", &[], &[5]).unwrap(), vec![5]);
        assert!(broadcast_shapes("t", &[2, 3], &[4, 3]).is_err());
    }

    #[test]
    fn broadcast_iteration_matches_naive() {
        let out = [2, 3, 4];
        let a = broadcast_strides(&[3, 1], &out);
        let b = broadcast_strides(&[2, 1, 4], &out);
        let mut seen = Vec::new();
        for_each_broadcast(&out, &a, &b, |o, ia, ib| seen.push((o, ia, ib)));
        assert_eq!(seen.len(), 24);
        for (o, ia, ib) in seen {
            let (i, j, k) = (o / 12, (o / 4) % 3, o % 4);
            assert_eq!(ia, j);
            assert_eq!(ib, i * 4 + k);
        }
    }
}
