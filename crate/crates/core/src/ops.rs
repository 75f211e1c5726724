//! Core differentiable ops: broadcasting arithmetic, activations, matmul,
//! softmax, layer norm and shape manipulation.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::tensor::{numel, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    /// tanh approximation
    Gelu,
    Exp,
    Log,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Strides of `shape` aligned to `out`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` over every element of `out`.
fn for_each_broadcast(
    out: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out);
    if a_shape == out && b_shape == out {
        (0..n).for_each(|i| f(i, i, i));
        return;
    }
    let an = numel(a_shape);
    let bn = numel(b_shape);
    // suffix broadcasts: offsets wrap
    let a_suffix = out.ends_with(a_shape);
    let b_suffix = out.ends_with(b_shape);
    if a_suffix && b_suffix {
        (0..n).for_each(|i| f(i, i % an, i % bn));
        return;
    }
    let sa = broadcast_strides(a_shape, out);
    let sb = broadcast_strides(b_shape, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..n {
        f(i, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums `grad` (shaped like `out`) down to `shape`.
fn reduce_to<T: Scalar>(grad: &Tensor<T>, shape: &[usize], scale: impl Fn(usize, usize) -> T) -> Tensor<T> {
    let mut acc = vec![T::zero(); numel(shape)];
    let gd = grad.data();
    for_each_broadcast(grad.shape(), shape, grad.shape(), |o, s, _| {
        acc[s] = acc[s] + gd[o] * scale(o, s);
    });
    Tensor::from_parts(shape.to_vec(), acc)
}

pub(crate) fn binary_backward<T: Scalar>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let out = grad.shape();
    let (ad, bd) = (a.data(), b.data());
    // map each output index back to operand offsets
    let mut a_of = Vec::new();
    let mut b_of = Vec::new();
    if matches!(kind, BinaryKind::Mul | BinaryKind::Div) {
        a_of.reserve(grad.len());
        b_of.reserve(grad.len());
        for_each_broadcast(out, a.shape(), b.shape(), |_, ia, ib| {
            a_of.push(ia);
            b_of.push(ib);
        });
    }
    let ga = need_a.then(|| match kind {
        BinaryKind::Add | BinaryKind::Sub => reduce_to(grad, a.shape(), |_, _| T::one()),
        BinaryKind::Mul => reduce_to(grad, a.shape(), |o, _| bd[b_of[o]]),
        BinaryKind::Div => reduce_to(grad, a.shape(), |o, _| T::one() / bd[b_of[o]]),
    });
    let gb = need_b.then(|| match kind {
        BinaryKind::Add => reduce_to(grad, b.shape(), |_, _| T::one()),
        BinaryKind::Sub => reduce_to(grad, b.shape(), |_, _| -T::one()),
        BinaryKind::Mul => reduce_to(grad, b.shape(), |o, _| ad[a_of[o]]),
        BinaryKind::Div => reduce_to(grad, b.shape(), |o, _| {
            let bv = bd[b_of[o]];
            -ad[a_of[o]] / (bv * bv)
        }),
    });
    (ga, gb)
}

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

pub(crate) fn unary_backward<T: Scalar>(
    kind: UnaryKind,
    x: &Tensor<T>,
    y: &Tensor<T>,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let xd = x.data();
    let yd = y.data();
    let data = grad
        .data()
        .iter()
        .enumerate()
        .map(|(i, &g)| match kind {
            UnaryKind::Relu => {
                if xd[i] > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            UnaryKind::Gelu => g * gelu_grad(xd[i]),
            UnaryKind::Exp => g * yd[i],
            UnaryKind::Log => g / xd[i],
        })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

struct MatDims {
    batch: Vec<usize>,
    a_off: Vec<usize>,
    b_off: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<MatDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape(format!("matmul needs rank >= 2, got {a:?} and {b:?}")));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = if trans_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if k != kb {
        return Err(Error::shape(format!("matmul inner extents differ: {a:?} x {b:?}")));
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch = broadcast_shape(ab, bb)?;
    let mut a_off = Vec::with_capacity(numel(&batch));
    let mut b_off = Vec::with_capacity(numel(&batch));
    for_each_broadcast(&batch, ab, bb, |_, ia, ib| {
        a_off.push(ia * m * k);
        b_off.push(ib * k * n);
    });
    Ok(MatDims { batch, a_off, b_off, m, k, n })
}

pub(crate) fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let d = matmul_dims(a.shape(), b.shape(), trans_b)?;
    let (m, k, n) = (d.m, d.k, d.n);
    let mut out = vec![T::zero(); d.a_off.len() * m * n];
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    for (bi, (&ao, &bo)) in d.a_off.iter().zip(&d.b_off).enumerate() {
        // SAFETY: offsets and extents come from validated shapes; `out` is a
        // fresh buffer that aliases neither operand.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                a.data().as_ptr().add(ao),
                k as isize,
                1,
                b.data().as_ptr().add(bo),
                rsb,
                csb,
                T::zero(),
                out.as_mut_ptr().add(bi * m * n),
                n as isize,
                1,
            );
        }
    }
    let mut shape = d.batch.clone();
    shape.extend([m, n]);
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    trans_b: bool,
    grad: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let d = matmul_dims(a.shape(), b.shape(), trans_b).expect("validated in forward");
    let (m, k, n) = (d.m, d.k, d.n);
    let gd = grad.data();
    let mut ga = need_a.then(|| vec![T::zero(); a.len()]);
    let mut gb = need_b.then(|| vec![T::zero(); b.len()]);
    // b element (kk, nn) lives at kk*rsb + nn*csb
    let (rsb, csb) = if trans_b { (1isize, k as isize) } else { (n as isize, 1isize) };
    for (bi, (&ao, &bo)) in d.a_off.iter().zip(&d.b_off).enumerate() {
        let g = unsafe { gd.as_ptr().add(bi * m * n) };
        // SAFETY: all pointers index validated buffers; gradient buffers are
        // distinct allocations from operands and upstream gradient.
        unsafe {
            if let Some(ga) = ga.as_mut() {
                // dA = dC . B^T
                T::gemm(m, n, k, T::one(), g, n as isize, 1, b.data().as_ptr().add(bo), csb, rsb, T::one(), ga.as_mut_ptr().add(ao), k as isize, 1);
            }
            if let Some(gb) = gb.as_mut() {
                // dB = A^T . dC, written through B's layout
                T::gemm(k, m, n, T::one(), a.data().as_ptr().add(ao), 1, k as isize, g, n as isize, 1, T::one(), gb.as_mut_ptr().add(bo), rsb, csb);
            }
        }
    }
    (
        ga.map(|v| Tensor::from_parts(a.shape().to_vec(), v)),
        gb.map(|v| Tensor::from_parts(b.shape().to_vec(), v)),
    )
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

pub(crate) fn softmax_forward<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(xd[at(j)]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (xd[at(j)] - max).exp();
                out[at(j)] = e;
                total = total + e;
            }
            for j in 0..len {
                out[at(j)] = out[at(j)] / total;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), grad.data());
    let mut out = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot = (0..len).fold(T::zero(), |acc, j| acc + yd[at(j)] * gd[at(j)]);
            for j in 0..len {
                out[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    xhat: &[T],
    rstd: &[T],
    grad: &Tensor<T>,
    axis: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (outer, len, inner) = split_axis(grad.shape(), axis);
    let (gd, gm) = (grad.data(), gamma.data());
    let mut gx = vec![T::zero(); grad.len()];
    let mut gg = vec![T::zero(); len];
    let mut gb = vec![T::zero(); len];
    let nf = T::from_f64(len as f64);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let r = rstd[o * inner + i];
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for j in 0..len {
                let dxh = gd[at(j)] * gm[j];
                mean_d = mean_d + dxh;
                mean_dx = mean_dx + dxh * xhat[at(j)];
                gg[j] = gg[j] + gd[at(j)] * xhat[at(j)];
                gb[j] = gb[j] + gd[at(j)];
            }
            mean_d = mean_d / nf;
            mean_dx = mean_dx / nf;
            for j in 0..len {
                let dxh = gd[at(j)] * gm[j];
                gx[at(j)] = r * (dxh - mean_d - xhat[at(j)] * mean_dx);
            }
        }
    }
    (
        Tensor::from_parts(grad.shape().to_vec(), gx),
        Tensor::from_parts(gamma.shape().to_vec(), gg),
        Tensor::from_parts(gamma.shape().to_vec(), gb),
    )
}

pub(crate) fn permute_tensor<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let xd = x.data();
    let mut out = Vec::with_capacity(x.len());
    // With the last axis in place, copy whole rows instead of single elements.
    let (run, outer_rank) = if rank > 0 && perm[rank - 1] == rank - 1 { (shape[rank - 1], rank - 1) } else { (1, rank) };
    if run == 0 || x.len() == 0 {
        return Tensor::from_parts(out_shape, out);
    }
    let mut idx = vec![0usize; outer_rank];
    let mut src = 0usize;
    for _ in 0..x.len() / run {
        out.extend_from_slice(&xd[src..src + run]);
        for d in (0..outer_rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

pub(crate) fn slice_tensor<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, full, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&xd[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::from_parts(shape, out)
}

pub(crate) fn unslice<T: Scalar>(grad: &Tensor<T>, full_shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, full, inner) = split_axis(full_shape, axis);
    let len = grad.shape()[axis];
    let mut out = vec![T::zero(); numel(full_shape)];
    let gd = grad.data();
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(full_shape.to_vec(), out)
}

impl<T: Scalar> Graph<T> {
    fn binary(&mut self, a: NodeId, b: NodeId, kind: BinaryKind) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(av.shape(), bv.shape())?;
        let mut out = vec![T::zero(); numel(&out_shape)];
        let (ad, bd) = (av.data(), bv.data());
        if kind == BinaryKind::Div && bd.iter().any(|v| *v == T::zero()) {
            return Err(Error::invalid("division by zero"));
        }
        for_each_broadcast(&out_shape, av.shape(), bv.shape(), |o, i, j| {
            out[o] = match kind {
                BinaryKind::Add => ad[i] + bd[j],
                BinaryKind::Sub => ad[i] - bd[j],
                BinaryKind::Mul => ad[i] * bd[j],
                BinaryKind::Div => ad[i] / bd[j],
            };
        });
        self.push("binary", Tensor::from_parts(out_shape, out), Op::Binary { a, b, kind })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryKind::Div)
    }

    pub fn elementwise(&mut self, a: NodeId, b: NodeId, kind: BinaryKind) -> Result<NodeId> {
        self.binary(a, b, kind)
    }

    pub fn unary(&mut self, x: NodeId, kind: UnaryKind) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x);
        if kind == UnaryKind::Log && xv.data().iter().any(|v| *v <= T::zero()) {
            return Err(Error::invalid("log of non-positive value"));
        }
        let out = xv.map(|v| match kind {
            UnaryKind::Relu => v.max(T::zero()),
            UnaryKind::Gelu => gelu(v),
            UnaryKind::Exp => v.exp(),
            UnaryKind::Log => v.ln(),
        });
        self.push("unary", out, Op::Unary { x, kind })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, UnaryKind::Gelu)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, UnaryKind::Exp)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, UnaryKind::Log)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.check(x)?;
        let f = T::from_f64(factor);
        let out = self.value(x).map(|v| v * f);
        self.push("scale", out, Op::Scale { x, factor: f })
    }

    /// `[.., M, K] x [.., K, N] -> [.., M, N]` with broadcast batch axes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let out = matmul_forward(self.value(a), self.value(b), false)?;
        self.push("matmul", out, Op::MatMul { a, b, trans_b: false })
    }

    /// `a . b^T` over the last two axes of `b`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let out = matmul_forward(self.value(a), self.value(b), true)?;
        self.push("matmul", out, Op::MatMul { a, b, trans_b: true })
    }

    fn check_axis(&self, x: NodeId, axis: usize) -> Result<()> {
        self.check(x)?;
        let rank = self.value(x).rank();
        if axis >= rank {
            return Err(Error::shape(format!("axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.check_axis(x, axis)?;
        let out = softmax_forward(self.value(x), axis);
        self.push("softmax", out, Op::Softmax { x, axis })
    }

    pub fn layer_norm(&mut self, x: NodeId, axis: usize, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.check_axis(x, axis)?;
        self.check(gamma)?;
        self.check(beta)?;
        let xv = self.value(x);
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        if self.value(gamma).shape() != [len] || self.value(beta).shape() != [len] {
            return Err(Error::shape(format!("layer_norm affine parameters must have shape [{len}]")));
        }
        let (xd, gm, bt) = (xv.data(), self.value(gamma).data(), self.value(beta).data());
        let nf = T::from_f64(len as f64);
        let eps = T::from_f64(eps);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); outer * inner];
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mean = (0..len).fold(T::zero(), |a, j| a + xd[at(j)]) / nf;
                let var = (0..len).fold(T::zero(), |a, j| {
                    let d = xd[at(j)] - mean;
                    a + d * d
                }) / nf;
                let r = T::one() / (var + eps).sqrt();
                rstd[o * inner + i] = r;
                for j in 0..len {
                    let h = (xd[at(j)] - mean) * r;
                    xhat[at(j)] = h;
                    out[at(j)] = h * gm[j] + bt[j];
                }
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push("layer_norm", out, Op::LayerNorm { x, gamma, beta, axis, xhat, rstd })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let out = self.value(x).reshaped(shape)?;
        self.push("reshape", out, Op::Reshape { x })
    }

    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let rank = self.value(x).rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!("invalid permutation {perm:?} for rank {rank}")));
        }
        let out = permute_tensor(self.value(x), perm);
        self.push("permute", out, Op::Permute { x, perm: perm.to_vec() })
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let Some(&first) = xs.first() else {
            return Err(Error::invalid("concat of zero tensors"));
        };
        self.check_axis(first, axis)?;
        let base = self.value(first).shape().to_vec();
        let mut total = 0;
        for &x in xs {
            self.check(x)?;
            let s = self.value(x).shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(Error::shape(format!("concat extents differ: {base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let len = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", Tensor::from_parts(shape, out), Op::Concat { xs: xs.to_vec(), axis })
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.check_axis(x, axis)?;
        let extent = self.value(x).shape()[axis];
        if len == 0 || start + len > extent {
            return Err(Error::shape(format!("slice {start}..{} outside extent {extent}", start + len)));
        }
        let out = slice_tensor(self.value(x), axis, start, len);
        self.push("slice", out, Op::Slice { x, axis, start })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x })
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let v = self.value(x);
        let m = v.sum() / T::from_f64(v.len() as f64);
        self.push("mean", Tensor::scalar(m), Op::Mean { x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64s(shape, v).unwrap()
    }

    #[test]
    fn add_and_relu() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1., 2.]));
        let b = g.constant(t(&[2], &[3., 4.]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4., 6.]);
        let x = g.constant(t(&[3], &[-1., 0., 2.]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0., 0., 2.]);
        let z = g.constant(t(&[1], &[0.]));
        let gz = g.gelu(z).unwrap();
        assert_eq!(g.value(gz).data(), &[0.]);
    }

    #[test]
    fn broadcasting_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape(&[4, 1], &[1, 5]).unwrap(), vec![4, 5]);
        assert!(broadcast_shape(&[4, 3], &[4]).is_err());
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 1], &[1., 2.]));
        let b = g.constant(t(&[3], &[10., 20., 30.]));
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[10., 20., 30., 20., 40., 60.]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1., 0.]));
        assert!(g.log(x).is_err());
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[5., 6.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[17., 39.]);
        let id = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let x = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let y = g.matmul(id, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let p = g.constant(Tensor::zeros(&[2, 3, 4]).unwrap());
        let q = g.constant(Tensor::zeros(&[2, 4, 5]).unwrap());
        let r = g.matmul(p, q).unwrap();
        assert_eq!(g.shape(r), &[2, 3, 5]);
        assert!(g.matmul(p, p).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0., 0., 0.]));
        let s = g.softmax(x, 0).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let y = g.constant(t(&[2], &[1000., 0.]));
        let s = g.softmax(y, 0).unwrap();
        assert_eq!(g.value(s).data()[0], 1.0);
        assert!(g.value(s).data()[1] < 1e-300);
        assert!(g.softmax(y, 1).is_err());
    }

    #[test]
    fn layer_norm_constant_slice_gives_beta() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 4], &[3.; 4]));
        let gamma = g.constant(t(&[4], &[2.; 4]));
        let beta = g.constant(t(&[4], &[0.5, -1., 0., 7.]));
        let y = g.layer_norm(x, 1, gamma, beta, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1., 0., 7.]);
    }

    #[test]
    fn shape_ops() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]).unwrap());
        let b = g.constant(Tensor::zeros(&[2, 5]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 8]);
        assert!(g.concat(&[a, b], 0).is_err());
        let x = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let p = g.permute(x, &[1, 0]).unwrap();
        assert_eq!(g.value(p).data(), &[1., 4., 2., 5., 3., 6.]);
        let s = g.slice(x, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[2., 3., 5., 6.]);
        assert!(g.slice(x, 1, 2, 2).is_err());
        assert!(g.reshape(x, &[5]).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1., 2.]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1., 1.]);

        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1., 2.]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[2., 4.]);

        let mut g = Graph::new();
        let x = g.param(t(&[1], &[3.]));
        let c = g.constant(t(&[1], &[5.]));
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, c).unwrap();
        let s = g.sum(z).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[10.]);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.len(), 1);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1., 2.]));
        assert!(g.backward(x).is_err());
        let c = g.constant(t(&[2], &[1., 2.]));
        let s = g.sum(c).unwrap();
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_vec(&[1], vec![1000.0]).unwrap());
        assert!(matches!(g.exp(x), Err(Error::NonFinite(_))));
    }
}
