//! Raw forward/backward kernels on flat row-major buffers.

use crate::{Error, Result, Scalar};

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `(outer, len, inner)` view of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numpy-style broadcast of two shapes (right aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` seen through the broadcast `out` shape (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Visits every position of the broadcast shape `out` with the matching
/// offsets into the two operands.
pub(crate) fn for_each_broadcast(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let n: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..n {
        f(o, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn binary<S: Scalar>(
    op: &'static str,
    a_shape: &[usize],
    a: &[S],
    b_shape: &[usize],
    b: &[S],
    f: impl Fn(S, S) -> S,
) -> Result<(Vec<usize>, Vec<S>)> {
    if a_shape == b_shape {
        let data = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        return Ok((a_shape.to_vec(), data));
    }
    let out = broadcast_shape(a_shape, b_shape).ok_or_else(|| Error::shape(op, a_shape, b_shape))?;
    let n: usize = out.iter().product();
    // Trailing-suffix broadcast (bias add) is the common case.
    if out == a_shape && a_shape.ends_with(b_shape) {
        let m = b.len();
        let data = (0..n).map(|i| f(a[i], b[i % m])).collect();
        return Ok((out, data));
    }
    let mut data = vec![S::zero(); n];
    for_each_broadcast(a_shape, b_shape, &out, |o, ia, ib| data[o] = f(a[ia], b[ib]));
    Ok((out, data))
}

/// Sums a gradient of shape `out` down to an operand of shape `shape`.
pub(crate) fn reduce_to<S: Scalar>(grad: &[S], out: &[usize], shape: &[usize]) -> Vec<S> {
    let n: usize = shape.iter().product();
    if out == shape {
        return grad.to_vec();
    }
    let mut acc = vec![S::zero(); n];
    if out.ends_with(shape) {
        for (i, &g) in grad.iter().enumerate() {
            acc[i % n] = acc[i % n] + g;
        }
        return acc;
    }
    for_each_broadcast(shape, &[], out, |o, ia, _| acc[ia] = acc[ia] + grad[o]);
    acc
}

pub(crate) struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `(out_batch, a_batch, b_batch)` matrix indices.
    pub pairs: Vec<(usize, usize, usize)>,
}

pub(crate) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(Error::shape("matmul", a, b));
    }
    let ba = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    if bb.is_empty() {
        // Right operand is a plain matrix: fold all left batch axes into rows.
        let rows = ba.iter().product::<usize>() * m;
        let mut out_shape = ba.to_vec();
        out_shape.extend([m, n]);
        return Ok(MatmulPlan {
            out_shape,
            m: rows,
            k,
            n,
            pairs: vec![(0, 0, 0)],
        });
    }
    let batch = broadcast_shape(ba, bb).ok_or_else(|| Error::shape("matmul", a, b))?;
    let mut pairs = Vec::with_capacity(batch.iter().product());
    for_each_broadcast(ba, bb, &batch, |o, ia, ib| pairs.push((o, ia, ib)));
    let mut out_shape = batch;
    out_shape.extend([m, n]);
    Ok(MatmulPlan {
        out_shape,
        m,
        k,
        n,
        pairs,
    })
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj = *cj + aip * bj;
            }
        }
    }
}

/// `c[m,k] += g[m,n] * b[k,n]^T`
pub(crate) fn gemm_nt<S: Scalar>(g: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = S::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                s = s + x * y;
            }
            c[i * k + p] = c[i * k + p] + s;
        }
    }
}

/// `c[k,n] += a[m,k]^T * g[m,n]`
pub(crate) fn gemm_tn<S: Scalar>(a: &[S], g: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &gj) in crow.iter_mut().zip(grow) {
                *cj = *cj + aip * gj;
            }
        }
    }
}

pub(crate) fn matmul_forward<S: Scalar>(plan: &MatmulPlan, a: &[S], b: &[S]) -> Vec<S> {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![S::zero(); plan.out_shape.iter().product()];
    for &(o, ia, ib) in &plan.pairs {
        gemm_nn(
            &a[ia * m * k..(ia + 1) * m * k],
            &b[ib * k * n..(ib + 1) * k * n],
            &mut out[o * m * n..(o + 1) * m * n],
            m,
            k,
            n,
        );
    }
    out
}

pub(crate) fn softmax_forward<S: Scalar>(shape: &[usize], x: &[S], axis: usize) -> Vec<S> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut y = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut mx = S::neg_infinity();
            for j in 0..len {
                mx = mx.max(x[at(j)]);
            }
            let mut sum = S::zero();
            for j in 0..len {
                let e = (x[at(j)] - mx).exp();
                y[at(j)] = e;
                sum = sum + e;
            }
            for j in 0..len {
                y[at(j)] = y[at(j)] / sum;
            }
        }
    }
    y
}

pub(crate) fn log_softmax_forward<S: Scalar>(shape: &[usize], x: &[S], axis: usize) -> Vec<S> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut y = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut mx = S::neg_infinity();
            for j in 0..len {
                mx = mx.max(x[at(j)]);
            }
            let mut sum = S::zero();
            for j in 0..len {
                sum = sum + (x[at(j)] - mx).exp();
            }
            let lse = mx + sum.ln();
            for j in 0..len {
                y[at(j)] = x[at(j)] - lse;
            }
        }
    }
    y
}

pub(crate) fn sum_axis<S: Scalar>(shape: &[usize], x: &[S], axis: usize) -> Vec<S> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut y = vec![S::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..len {
            let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
            let dst = &mut y[o * inner..(o + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
    y
}

pub(crate) fn transpose<S: Scalar>(shape: &[usize], x: &[S], perm: &[usize]) -> (Vec<usize>, Vec<S>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let rank = shape.len();
    let mut y = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        y.push(x[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, y)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Zero-mean, unit-variance normalisation along `axis` (biased variance).
/// Returns the output, the per-slice inverse std, and the per-slice mean and variance.
pub(crate) fn standardize_forward<S: Scalar>(
    shape: &[usize],
    x: &[S],
    axis: usize,
    eps: S,
) -> (Vec<S>, Vec<S>, Vec<S>, Vec<S>) {
    let (outer, len, inner) = split_axis(shape, axis);
    let nf = S::of(len as f64);
    let mut y = vec![S::zero(); x.len()];
    let mut inv_std = vec![S::zero(); outer * inner];
    let mut means = vec![S::zero(); outer * inner];
    let mut vars = vec![S::zero(); outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mean = (0..len).map(|j| x[at(j)]).sum::<S>() / nf;
            let var = (0..len).map(|j| (x[at(j)] - mean).powi(2)).sum::<S>() / nf;
            let r = S::one() / (var + eps).sqrt();
            for j in 0..len {
                y[at(j)] = (x[at(j)] - mean) * r;
            }
            inv_std[o * inner + i] = r;
            means[o * inner + i] = mean;
            vars[o * inner + i] = var;
        }
    }
    (y, inv_std, means, vars)
}

pub(crate) fn standardize_backward<S: Scalar>(
    shape: &[usize],
    y: &[S],
    inv_std: &[S],
    g: &[S],
    axis: usize,
) -> Vec<S> {
    let (outer, len, inner) = split_axis(shape, axis);
    let nf = S::of(len as f64);
    let mut dx = vec![S::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mg = (0..len).map(|j| g[at(j)]).sum::<S>() / nf;
            let mgy = (0..len).map(|j| g[at(j)] * y[at(j)]).sum::<S>() / nf;
            let r = inv_std[o * inner + i];
            for j in 0..len {
                dx[at(j)] = r * (g[at(j)] - mg - y[at(j)] * mgy);
            }
        }
    }
    dx
}

/// Geometry of a sequence-major 1-D convolution: input `[batch, len, c_in]`,
/// weight `[kernel, c_in, c_out]`, output `[batch, out_len, c_out]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub len: usize,
    pub out_len: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeom {
    /// Input position read by output position `t` through tap `j`, if inside the signal.
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let s = (t + j).checked_sub(self.padding)?;
        (s < self.len).then_some(s)
    }
}

pub(crate) fn conv1d_forward<S: Scalar>(g: &ConvGeom, x: &[S], w: &[S], bias: Option<&[S]>) -> Vec<S> {
    let mut y = vec![S::zero(); g.batch * g.out_len * g.c_out];
    for b in 0..g.batch {
        for t in 0..g.out_len {
            let row = &mut y[(b * g.out_len + t) * g.c_out..(b * g.out_len + t + 1) * g.c_out];
            if let Some(bias) = bias {
                row.copy_from_slice(bias);
            }
            for j in 0..g.kernel {
                if let Some(s) = g.source(t, j) {
                    let xin = &x[(b * g.len + s) * g.c_in..(b * g.len + s + 1) * g.c_in];
                    let wj = &w[j * g.c_in * g.c_out..(j + 1) * g.c_in * g.c_out];
                    gemm_nn(xin, wj, row, 1, g.c_in, g.c_out);
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw, dbias)`.
pub(crate) fn conv1d_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    w: &[S],
    dy: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut dx = vec![S::zero(); x.len()];
    let mut dw = vec![S::zero(); w.len()];
    let mut db = vec![S::zero(); g.c_out];
    for b in 0..g.batch {
        for t in 0..g.out_len {
            let grow = &dy[(b * g.out_len + t) * g.c_out..(b * g.out_len + t + 1) * g.c_out];
            for (d, &gv) in db.iter_mut().zip(grow) {
                *d = *d + gv;
            }
            for j in 0..g.kernel {
                if let Some(s) = g.source(t, j) {
                    let xoff = (b * g.len + s) * g.c_in;
                    let woff = j * g.c_in * g.c_out;
                    gemm_nt(
                        grow,
                        &w[woff..woff + g.c_in * g.c_out],
                        &mut dx[xoff..xoff + g.c_in],
                        1,
                        g.c_in,
                        g.c_out,
                    );
                    gemm_tn(
                        &x[xoff..xoff + g.c_in],
                        grow,
                        &mut dw[woff..woff + g.c_in * g.c_out],
                        1,
                        g.c_in,
                        g.c_out,
                    );
                }
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn reduce_to_sums_broadcast_axes() {
        // out [2,3] from operand [1,3]
        let g = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(reduce_to(&g, &[2, 3], &[1, 3]), vec![5.0, 7.0, 9.0]);
        assert_eq!(reduce_to(&g, &[2, 3], &[2, 1]), vec![6.0, 15.0]);
        assert_eq!(reduce_to(&g, &[2, 3], &[]), vec![21.0]);
    }

    #[test]
    fn transpose_inverse() {
        let x: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let perm = [2, 0, 1];
        let (s, y) = transpose(&[2, 3, 4], &x, &perm);
        assert_eq!(s, vec![4, 2, 3]);
        let (s2, z) = transpose(&s, &y, &inverse_perm(&perm));
        assert_eq!(s2, vec![2, 3, 4]);
        assert_eq!(z, x);
    }
}
