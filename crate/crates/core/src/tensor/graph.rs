use super::kernels::{self, ConvGeom, MatmulPlan};
use super::{check_shape, Tensor};
use crate::{Error, Result, Scalar};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var, MatmulPlan),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Tanh(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Concat(Vec<Var>, usize),
    Transpose(Var, Vec<usize>),
    Reshape(Var),
    Expand(Var),
    Standardize {
        x: Var,
        axis: usize,
        inv_std: Vec<S>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Pick(Var, Vec<usize>),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` walks it in reverse. A graph belongs to
/// one thread at a time; independent graphs may be built concurrently.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of non-leaf nodes recorded so far.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`backward`](Self::backward) call.
    /// `None` for nodes that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(Error::InvalidAxis { op, axis, rank });
        }
        Ok(())
    }

    /// Batched matrix product `[..., m, k] x [..., k, n]`; batch axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = kernels::matmul_plan(self.shape(a), self.shape(b))?;
        let data = kernels::matmul_forward(&plan, self.value(a).data(), self.value(b).data());
        let value = Tensor::from_parts(plan.out_shape.clone(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b, plan), rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<(Tensor<S>, bool)> {
        let (va, vb) = (self.value(a), self.value(b));
        let (shape, data) = kernels::binary(name, va.shape(), va.data(), vb.shape(), vb.data(), f)?;
        Ok((Tensor::from_parts(shape, data), self.rg(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let v = self.value(x).map(|e| e * c);
        let rg = self.rg(&[x]);
        self.push(v, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| if e > S::zero() { e } else { S::zero() });
        let rg = self.rg(&[x]);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.tanh());
        let rg = self.rg(&[x]);
        self.push(v, Op::Tanh(x), rg)
    }

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let t = self.value(x);
        let data = kernels::softmax_forward(t.shape(), t.data(), axis);
        let v = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Softmax(x, axis), rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let t = self.value(x);
        let data = kernels::log_softmax_forward(t.shape(), t.data(), axis);
        let v = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::LogSoftmax(x, axis), rg))
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s = shape.to_vec();
        s.remove(axis);
        s
    }

    /// Sum along `axis`; the axis is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum", x, axis)?;
        let t = self.value(x);
        let data = kernels::sum_axis(t.shape(), t.data(), axis);
        let v = Tensor::from_parts(Self::reduced_shape(t.shape(), axis), data);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Sum(x, axis), rg))
    }

    /// Arithmetic mean along `axis`; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("reduce_mean", x, axis)?;
        let t = self.value(x);
        let n = S::of(t.shape()[axis] as f64);
        let data = kernels::sum_axis(t.shape(), t.data(), axis)
            .into_iter()
            .map(|s| s / n)
            .collect();
        let v = Tensor::from_parts(Self::reduced_shape(t.shape(), axis), data);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Mean(x, axis), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: S = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no parts"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec(), axis), rg))
    }

    pub fn transpose(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(
                "transpose",
                format!("{perm:?} is not a permutation of rank {rank}"),
            ));
        }
        let t = self.value(x);
        let (shape, data) = kernels::transpose(t.shape(), t.data(), perm);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Transpose(x, perm.to_vec()), rg))
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank,
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.transpose(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Broadcasts `x` to `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape("expand", shape)?;
        let src = self.shape(x).to_vec();
        if kernels::broadcast_shape(&src, shape).as_deref() != Some(shape) {
            return Err(Error::shape("expand", &src, shape));
        }
        let t = self.value(x);
        let mut data = vec![S::zero(); shape.iter().product()];
        kernels::for_each_broadcast(&src, &[], shape, |o, i, _| data[o] = t.data()[i]);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Expand(x), rg))
    }

    /// Zero-mean unit-variance normalisation along `axis` with biased variance.
    pub fn standardize(&mut self, x: Var, axis: usize, eps: S) -> Result<Var> {
        Ok(self.standardize_with_stats(x, axis, eps)?.0)
    }

    /// As [`standardize`](Self::standardize), also returning the per-slice mean
    /// and biased variance (shape of `x` with `axis` removed).
    pub fn standardize_with_stats(&mut self, x: Var, axis: usize, eps: S) -> Result<(Var, Tensor<S>, Tensor<S>)> {
        self.check_axis("standardize", x, axis)?;
        let t = self.value(x);
        let (y, inv_std, means, vars) = kernels::standardize_forward(t.shape(), t.data(), axis, eps);
        let stat_shape = Self::reduced_shape(t.shape(), axis);
        let v = Tensor::from_parts(t.shape().to_vec(), y);
        let rg = self.rg(&[x]);
        let out = self.push(v, Op::Standardize { x, axis, inv_std }, rg);
        Ok((
            out,
            Tensor::from_parts(stat_shape.clone(), means),
            Tensor::from_parts(stat_shape, vars),
        ))
    }

    /// 1-D cross-correlation over a sequence-major input `[batch, len, c_in]`
    /// with weight `[kernel, c_in, c_out]` and optional bias `[c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] {
            return Err(Error::shape("conv1d", &xs, &ws));
        }
        let (kernel, c_out) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv1d", &ws, self.shape(b)));
            }
        }
        let padded = xs[1] + 2 * padding;
        if kernel > padded {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel {kernel} exceeds padded length {padded}"),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            len: xs[1],
            out_len: padded - kernel + 1,
            c_in: xs[2],
            c_out,
            kernel,
            padding,
        };
        let data = kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let v = Tensor::from_parts(vec![geom.batch, geom.out_len, c_out], data);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(v, Op::Conv1d { x, w, b, geom }, rg))
    }

    /// Selects `x[r, indices[r]]` from a `[rows, cols]` tensor.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != indices.len() {
            return Err(Error::shape("pick", &s, &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[1]) {
            return Err(Error::invalid(
                "pick",
                format!("index {bad} out of range for {} columns", s[1]),
            ));
        }
        let t = self.value(x);
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| t.data()[r * s[1] + c])
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![indices.len()], data),
            Op::Pick(x, indices.to_vec()),
            rg,
        ))
    }

    /// `x W + b` with `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Populates gradients of `loss` with respect to every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if !shape.iter().all(|&e| e == 1) {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(n.value.shape()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let mut acc = |v: Var, data: Vec<S>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let shape = self.nodes[v.0].value.shape().to_vec();
            let t = Tensor::from_parts(shape, data);
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b, plan) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (plan.m, plan.k, plan.n);
                if self.requires_grad(*a) {
                    let mut da = vec![S::zero(); va.len()];
                    for &(o, ia, ib) in &plan.pairs {
                        kernels::gemm_nt(
                            &gd[o * m * n..(o + 1) * m * n],
                            &vb.data()[ib * k * n..(ib + 1) * k * n],
                            &mut da[ia * m * k..(ia + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    acc(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![S::zero(); vb.len()];
                    for &(o, ia, ib) in &plan.pairs {
                        kernels::gemm_tn(
                            &va.data()[ia * m * k..(ia + 1) * m * k],
                            &gd[o * m * n..(o + 1) * m * n],
                            &mut db[ib * k * n..(ib + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
                acc(*a, kernels::reduce_to(gd, out_shape, self.shape(*a)));
                if self.requires_grad(*b) {
                    let gb: Vec<S> = kernels::reduce_to(gd, out_shape, self.shape(*b))
                        .into_iter()
                        .map(|x| x * sign)
                        .collect();
                    acc(*b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                for (this, other) in [(*a, vb), (*b, va)] {
                    if !self.requires_grad(this) {
                        continue;
                    }
                    let (_, prod) = kernels::binary("mul", out_shape, gd, other.shape(), other.data(), |x, y| x * y)?;
                    acc(this, kernels::reduce_to(&prod, out_shape, self.shape(this)));
                }
            }
            Op::Scale(x, c) => acc(*x, gd.iter().map(|&v| v * *c).collect()),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    gd.iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                        .collect(),
                );
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, gd.iter().zip(y).map(|(&g, &y)| g * (S::one() - y * y)).collect());
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let (outer, len, inner) = kernels::split_axis(out_shape, *axis);
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + ii;
                        let dot: S = (0..len).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmax(x, axis) => {
                let y = node.value.data();
                let (outer, len, inner) = kernels::split_axis(out_shape, *axis);
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + ii;
                        let total: S = (0..len).map(|j| gd[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = gd[at(j)] - y[at(j)].exp() * total;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let xs = self.shape(*x);
                let (outer, len, inner) = kernels::split_axis(xs, *axis);
                let c = if matches!(node.op, Op::Mean(..)) {
                    S::one() / S::of(len as f64)
                } else {
                    S::one()
                };
                let mut dx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        dx.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * c));
                    }
                }
                acc(*x, dx);
            }
            Op::SumAll(x) => acc(*x, vec![gd[0]; self.value(*x).len()]),
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = kernels::split_axis(out_shape, *axis);
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.requires_grad(p) {
                        let mut dp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + start * inner;
                            dp.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        acc(p, dp);
                    }
                    start += len;
                }
            }
            Op::Transpose(x, perm) => {
                let (_, dx) = kernels::transpose(out_shape, gd, &kernels::inverse_perm(perm));
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::Expand(x) => acc(*x, kernels::reduce_to(gd, out_shape, self.shape(*x))),
            Op::Standardize { x, axis, inv_std } => {
                let dx = kernels::standardize_backward(out_shape, node.value.data(), inv_std, gd, *axis);
                acc(*x, dx);
            }
            Op::Conv1d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv1d_backward(geom, self.value(*x).data(), self.value(*w).data(), gd);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Pick(x, indices) => {
                let cols = self.shape(*x)[1];
                let mut dx = vec![S::zero(); self.value(*x).len()];
                for (r, &c) in indices.iter().enumerate() {
                    dx[r * cols + c] = gd[r];
                }
                acc(*x, dx);
            }
        }
        Ok(())
    }
}
