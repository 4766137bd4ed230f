//! Op registry: forward methods on [`Tensor`] plus the matching backward rules.

use super::kernels;
use super::{Tensor, TensorError};
use crate::scalar::{r, Real};
use std::sync::Arc;

/// Fused op with a hand-written backward (e.g. the splatting renderer).
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    /// Gradients w.r.t. each input; `None` where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[Tensor<T>],
        output: &Tensor<T>,
        dout: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

pub enum Op<T: Real> {
    Add,
    Sub,
    Mul,
    ScalarMul(T),
    ScalarAdd(T),
    MatMul,
    Transpose2d,
    Conv2d { stride: usize, pad: usize },
    TConv2d { stride: usize, pad: usize },
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Log,
    SumAll,
    MeanAll,
    SumAxis(usize),
    MeanAxis(usize),
    Softmax(usize),
    GroupNorm { groups: usize, mean: Vec<T>, rstd: Vec<T> },
    Concat(usize),
    Slice { axis: usize, start: usize, end: usize },
    Reshape,
    UpsampleNearest2,
    AvgPool2,
    L2Norm,
    PixelNorm { eps: f64 },
    Custom(Arc<dyn CustomOp<T>>),
}

// ---------------------------------------------------------------------------
// broadcast helpers (rhs-only, restricted: every padded rhs dim is 1 or lhs dim)

fn broadcast_strides(lhs: &[usize], rhs: &[usize]) -> Option<Vec<usize>> {
    if rhs.len() > lhs.len() {
        return None;
    }
    let offset = lhs.len() - rhs.len();
    let mut padded = vec![1usize; lhs.len()];
    padded[offset..].copy_from_slice(rhs);
    let mut strides = vec![0usize; lhs.len()];
    let mut acc = 1usize;
    for d in (0..lhs.len()).rev() {
        if padded[d] == lhs[d] {
            strides[d] = acc;
            acc *= padded[d];
        } else if padded[d] == 1 {
            strides[d] = 0;
        } else {
            return None;
        }
    }
    Some(strides)
}

/// Visit (lhs_flat_index, rhs_flat_index) pairs in lhs order.
fn for_each_pair(lhs_shape: &[usize], rhs_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = lhs_shape.len();
    let total: usize = lhs_shape.iter().product();
    let mut counters = vec![0usize; rank];
    let mut ri = 0usize;
    for li in 0..total {
        f(li, ri);
        for d in (0..rank).rev() {
            counters[d] += 1;
            ri += rhs_strides[d];
            if counters[d] < lhs_shape[d] {
                break;
            }
            counters[d] = 0;
            ri -= rhs_strides[d] * lhs_shape[d];
        }
    }
}

fn binary_shapes<'a>(op: &str, a: &'a Tensor<impl Real>, b: &'a Tensor<impl Real>) -> Vec<usize> {
    assert!(
        broadcast_strides(a.shape(), b.shape()).is_some(),
        "{op}: cannot broadcast rhs {:?} onto lhs {:?}",
        b.shape(),
        a.shape()
    );
    a.shape().to_vec()
}

/// Largest channel-group count ≤ min(8, c) that divides c.
pub fn group_count(c: usize) -> usize {
    let cap = c.min(8);
    (1..=cap).rev().find(|d| c % d == 0).unwrap_or(1)
}

pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// forward methods

impl<T: Real> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> Tensor<T> {
        let shape = binary_shapes("add", self, rhs);
        let mut out = self.data().to_vec();
        if self.shape() == rhs.shape() {
            for (o, &b) in out.iter_mut().zip(rhs.data()) {
                *o = *o + b;
            }
        } else {
            let strides = broadcast_strides(self.shape(), rhs.shape()).unwrap();
            let rd = rhs.data();
            for_each_pair(self.shape(), &strides, |li, ri| out[li] = out[li] + rd[ri]);
        }
        Tensor::from_op(shape, out, Op::Add, vec![self.clone(), rhs.clone()])
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Tensor<T> {
        let shape = binary_shapes("sub", self, rhs);
        let mut out = self.data().to_vec();
        if self.shape() == rhs.shape() {
            for (o, &b) in out.iter_mut().zip(rhs.data()) {
                *o = *o - b;
            }
        } else {
            let strides = broadcast_strides(self.shape(), rhs.shape()).unwrap();
            let rd = rhs.data();
            for_each_pair(self.shape(), &strides, |li, ri| out[li] = out[li] - rd[ri]);
        }
        Tensor::from_op(shape, out, Op::Sub, vec![self.clone(), rhs.clone()])
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        let shape = binary_shapes("mul", self, rhs);
        let mut out = self.data().to_vec();
        if self.shape() == rhs.shape() {
            for (o, &b) in out.iter_mut().zip(rhs.data()) {
                *o = *o * b;
            }
        } else {
            let strides = broadcast_strides(self.shape(), rhs.shape()).unwrap();
            let rd = rhs.data();
            for_each_pair(self.shape(), &strides, |li, ri| out[li] = out[li] * rd[ri]);
        }
        Tensor::from_op(shape, out, Op::Mul, vec![self.clone(), rhs.clone()])
    }

    pub fn scalar_mul(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::ScalarMul(c), vec![self.clone()])
    }

    pub fn scalar_add(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::ScalarAdd(c), vec![self.clone()])
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "matmul lhs must be 2-d, got {:?}", self.shape());
        assert_eq!(rhs.rank(), 2, "matmul rhs must be 2-d, got {:?}", rhs.shape());
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        assert_eq!(k, k2, "matmul inner dims differ: {:?} x {:?}", self.shape(), rhs.shape());
        let out = kernels::matmul(self.data(), rhs.data(), m, k, n);
        Tensor::from_op(vec![m, n], out, Op::MatMul, vec![self.clone(), rhs.clone()])
    }

    pub fn transpose2d(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "transpose2d needs a 2-d tensor");
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let out = kernels::transpose(self.data(), m, n);
        Tensor::from_op(vec![n, m], out, Op::Transpose2d, vec![self.clone()])
    }

    /// x[Cin,H,W] * w[Cout,Cin,kh,kw] (+ b[Cout]) -> [Cout,Ho,Wo].
    pub fn conv2d(&self, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize, pad: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 3, "conv2d input must be [C,H,W]");
        assert_eq!(w.rank(), 4, "conv2d weight must be [Cout,Cin,kh,kw]");
        let (cin, h, wd) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (cout, cin_w, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        assert_eq!(cin, cin_w, "conv2d channel mismatch");
        let ho = kernels::conv_out_dim(h, kh, stride, pad);
        let wo = kernels::conv_out_dim(wd, kw, stride, pad);
        let col = kernels::im2col(self.data(), cin, h, wd, kh, kw, stride, pad);
        let mut out = kernels::matmul(w.data(), &col, cout, cin * kh * kw, ho * wo);
        let mut inputs = vec![self.clone(), w.clone()];
        if let Some(bias) = b {
            assert_eq!(bias.shape(), &[cout], "conv2d bias must be [Cout]");
            for (c, &bv) in bias.data().iter().enumerate() {
                for o in &mut out[c * ho * wo..(c + 1) * ho * wo] {
                    *o = *o + bv;
                }
            }
            inputs.push(bias.clone());
        }
        Tensor::from_op(vec![cout, ho, wo], out, Op::Conv2d { stride, pad }, inputs)
    }

    /// Transposed convolution: x[Cin,H,W] * w[Cin,Cout,kh,kw] (+ b[Cout]).
    pub fn tconv2d(&self, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize, pad: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 3, "tconv2d input must be [C,H,W]");
        assert_eq!(w.rank(), 4, "tconv2d weight must be [Cin,Cout,kh,kw]");
        let (cin, h, wd) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (cin_w, cout, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        assert_eq!(cin, cin_w, "tconv2d channel mismatch");
        let ho = (h - 1) * stride + kh - 2 * pad;
        let wo = (wd - 1) * stride + kw - 2 * pad;
        // col[Cout*kh*kw, H*W] = w^T[Cout*k*k, Cin] * x[Cin, H*W]
        let wt = kernels::transpose(w.data(), cin, cout * kh * kw);
        let col = kernels::matmul(&wt, self.data(), cout * kh * kw, cin, h * wd);
        let mut out = kernels::col2im(&col, cout, ho, wo, kh, kw, stride, pad);
        let mut inputs = vec![self.clone(), w.clone()];
        if let Some(bias) = b {
            assert_eq!(bias.shape(), &[cout], "tconv2d bias must be [Cout]");
            for (c, &bv) in bias.data().iter().enumerate() {
                for o in &mut out[c * ho * wo..(c + 1) * ho * wo] {
                    *o = *o + bv;
                }
            }
            inputs.push(bias.clone());
        }
        Tensor::from_op(vec![cout, ho, wo], out, Op::TConv2d { stride, pad }, inputs)
    }

    pub fn relu(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x.max(T::zero())).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Relu, vec![self.clone()])
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&x| sigmoid_stable(x)).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Sigmoid, vec![self.clone()])
    }

    pub fn tanh(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x.tanh()).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Tanh, vec![self.clone()])
    }

    pub fn softplus(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&x| softplus_stable(x)).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Softplus, vec![self.clone()])
    }

    pub fn exp(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x.exp()).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Exp, vec![self.clone()])
    }

    pub fn log(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x.ln()).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Log, vec![self.clone()])
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let mut acc = 0.0f64;
        for v in self.data() {
            acc += v.as_f64();
        }
        Tensor::from_op(vec![1], vec![r(acc)], Op::SumAll, vec![self.clone()])
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let mut acc = 0.0f64;
        for v in self.data() {
            acc += v.as_f64();
        }
        let m = acc / self.numel() as f64;
        Tensor::from_op(vec![1], vec![r(m)], Op::MeanAll, vec![self.clone()])
    }

    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        let (shape, out) = reduce_axis(self, axis, false);
        Tensor::from_op(shape, out, Op::SumAxis(axis), vec![self.clone()])
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor<T> {
        let (shape, out) = reduce_axis(self, axis, true);
        Tensor::from_op(shape, out, Op::MeanAxis(axis), vec![self.clone()])
    }

    pub fn softmax(&self, axis: usize) -> Tensor<T> {
        assert!(axis < self.rank(), "softmax axis out of range");
        let (outer, d, inner) = lane_dims(self.shape(), axis);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * d + k) * inner + i;
                let mut mx = x[at(0)];
                for k in 1..d {
                    mx = mx.max(x[at(k)]);
                }
                let mut denom = T::zero();
                for k in 0..d {
                    let e = (x[at(k)] - mx).exp();
                    out[at(k)] = e;
                    denom = denom + e;
                }
                for k in 0..d {
                    out[at(k)] = out[at(k)] / denom;
                }
            }
        }
        Tensor::from_op(self.shape().to_vec(), out, Op::Softmax(axis), vec![self.clone()])
    }

    /// Group normalization over axis 0 channels with affine scale/shift.
    /// Group count is min(8, C) (largest divisor fallback), epsilon 1e-5.
    pub fn group_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
        let c = self.shape()[0];
        self.group_norm_with(gamma, beta, group_count(c))
    }

    pub fn group_norm_with(&self, gamma: &Tensor<T>, beta: &Tensor<T>, groups: usize) -> Tensor<T> {
        assert!(self.rank() >= 1);
        let c = self.shape()[0];
        assert_eq!(gamma.shape(), &[c], "group_norm gamma must be [C]");
        assert_eq!(beta.shape(), &[c], "group_norm beta must be [C]");
        assert!(groups >= 1 && c % groups == 0, "group count {groups} must divide channels {c}");
        let spatial = self.numel() / c;
        let per_group = (c / groups) * spatial;
        let x = self.data();
        let mut mean = vec![T::zero(); groups];
        let mut rstd = vec![T::zero(); groups];
        let mut out = vec![T::zero(); x.len()];
        for g in 0..groups {
            let lo = g * per_group;
            let hi = lo + per_group;
            let mut acc = 0.0f64;
            for v in &x[lo..hi] {
                acc += v.as_f64();
            }
            let mu = acc / per_group as f64;
            let mut var = 0.0f64;
            for v in &x[lo..hi] {
                let d = v.as_f64() - mu;
                var += d * d;
            }
            var /= per_group as f64;
            let rs = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            mean[g] = r(mu);
            rstd[g] = r(rs);
            for idx in lo..hi {
                let ch = idx / spatial;
                let xhat = (x[idx] - mean[g]) * rstd[g];
                out[idx] = gamma.data()[ch] * xhat + beta.data()[ch];
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::GroupNorm { groups, mean, rstd },
            vec![self.clone(), gamma.clone(), beta.clone()],
        )
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = parts[0].rank();
        assert!(axis < rank);
        let mut shape = parts[0].shape().to_vec();
        let mut axis_total = 0usize;
        for p in parts {
            assert_eq!(p.rank(), rank, "concat rank mismatch");
            for (d, (&a, &b)) in shape.iter().zip(p.shape()).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch off-axis");
            }
            axis_total += p.shape()[axis];
        }
        shape[axis] = axis_total;
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = vec![T::zero(); shape.iter().product()];
        let row_total = axis_total * inner;
        let mut offset = 0usize;
        for p in parts {
            let a = p.shape()[axis];
            let row = a * inner;
            for o in 0..outer {
                out[o * row_total + offset..o * row_total + offset + row]
                    .copy_from_slice(&p.data()[o * row..(o + 1) * row]);
            }
            offset += row;
        }
        let inputs = parts.iter().map(|p| (*p).clone()).collect();
        Tensor::from_op(shape, out, Op::Concat(axis), inputs)
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Tensor<T> {
        assert!(axis < self.rank());
        assert!(start < end && end <= self.shape()[axis], "slice [{start},{end}) out of range");
        let mut shape = self.shape().to_vec();
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let a = shape[axis];
        shape[axis] = end - start;
        let mut out = vec![T::zero(); shape.iter().product()];
        let row = (end - start) * inner;
        for o in 0..outer {
            out[o * row..(o + 1) * row]
                .copy_from_slice(&self.data()[(o * a + start) * inner..(o * a + end) * inner]);
        }
        Tensor::from_op(shape, out, Op::Slice { axis, start, end }, vec![self.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.numel(), "reshape {:?} -> {:?} changes element count", self.shape(), shape);
        Tensor::from_op(shape.to_vec(), self.data().to_vec(), Op::Reshape, vec![self.clone()])
    }

    pub fn upsample_nearest_x2(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 3, "upsample_nearest_x2 input must be [C,H,W]");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let mut out = vec![T::zero(); c * 4 * h * w];
        let x = self.data();
        for ci in 0..c {
            for y in 0..2 * h {
                let src = &x[(ci * h + y / 2) * w..][..w];
                let dst = &mut out[(ci * 2 * h + y) * 2 * w..][..2 * w];
                for xx in 0..2 * w {
                    dst[xx] = src[xx / 2];
                }
            }
        }
        Tensor::from_op(vec![c, 2 * h, 2 * w], out, Op::UpsampleNearest2, vec![self.clone()])
    }

    pub fn avgpool_x2(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 3, "avgpool_x2 input must be [C,H,W]");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        assert!(h % 2 == 0 && w % 2 == 0, "avgpool_x2 needs even spatial dims, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let x = self.data();
        let quarter = r::<T>(0.25);
        let mut out = vec![T::zero(); c * ho * wo];
        for ci in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = (ci * h + 2 * y) * w + 2 * xx;
                    let s = x[base] + x[base + 1] + x[base + w] + x[base + w + 1];
                    out[(ci * ho + y) * wo + xx] = s * quarter;
                }
            }
        }
        Tensor::from_op(vec![c, ho, wo], out, Op::AvgPool2, vec![self.clone()])
    }

    /// Euclidean norm of the whole tensor (scalar output).
    pub fn l2_norm(&self) -> Tensor<T> {
        let mut acc = 0.0f64;
        for v in self.data() {
            let x = v.as_f64();
            acc += x * x;
        }
        Tensor::from_op(vec![1], vec![r(acc.sqrt())], Op::L2Norm, vec![self.clone()])
    }

    /// Normalize each position of a [C, ...] tensor to unit length across axis 0.
    pub fn pixel_norm(&self, eps: f64) -> Tensor<T> {
        let c = self.shape()[0];
        let spatial = self.numel() / c;
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for i in 0..spatial {
            let mut acc = 0.0f64;
            for ch in 0..c {
                let v = x[ch * spatial + i].as_f64();
                acc += v * v;
            }
            let inv = r::<T>(1.0 / (acc + eps).sqrt());
            for ch in 0..c {
                out[ch * spatial + i] = x[ch * spatial + i] * inv;
            }
        }
        Tensor::from_op(self.shape().to_vec(), out, Op::PixelNorm { eps }, vec![self.clone()])
    }
}

fn sigmoid_stable<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus_stable<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduce_axis<T: Real>(t: &Tensor<T>, axis: usize, mean: bool) -> (Vec<usize>, Vec<T>) {
    assert!(axis < t.rank(), "reduce axis out of range");
    let (outer, d, inner) = lane_dims(t.shape(), axis);
    let x = t.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..d {
            for i in 0..inner {
                out[o * inner + i] = out[o * inner + i] + x[(o * d + k) * inner + i];
            }
        }
    }
    if mean {
        let inv = r::<T>(1.0 / d as f64);
        for v in &mut out {
            *v = *v * inv;
        }
    }
    let mut shape: Vec<usize> = t.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    (shape, out)
}

// ---------------------------------------------------------------------------
// backward

impl<T: Real> Op<T> {
    pub(crate) fn backward(
        &self,
        inputs: &[Tensor<T>],
        output: &Tensor<T>,
        dout: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        match self {
            Op::Add => {
                let da = needs[0].then(|| dout.to_vec());
                let db = needs[1].then(|| reduce_to_rhs(dout, inputs[0].shape(), inputs[1].shape(), None));
                vec![da, db]
            }
            Op::Sub => {
                let da = needs[0].then(|| dout.to_vec());
                let db = needs[1].then(|| {
                    let mut g = reduce_to_rhs(dout, inputs[0].shape(), inputs[1].shape(), None);
                    for v in &mut g {
                        *v = -*v;
                    }
                    g
                });
                vec![da, db]
            }
            Op::Mul => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let da = needs[0].then(|| {
                    let mut g = vec![T::zero(); a.numel()];
                    if a.shape() == b.shape() {
                        for ((g, &d), &bv) in g.iter_mut().zip(dout).zip(b.data()) {
                            *g = d * bv;
                        }
                    } else {
                        let strides = broadcast_strides(a.shape(), b.shape()).unwrap();
                        let bd = b.data();
                        for_each_pair(a.shape(), &strides, |li, ri| g[li] = dout[li] * bd[ri]);
                    }
                    g
                });
                let db = needs[1].then(|| reduce_to_rhs(dout, a.shape(), b.shape(), Some(a.data())));
                vec![da, db]
            }
            Op::ScalarMul(c) => {
                vec![needs[0].then(|| dout.iter().map(|&d| d * *c).collect())]
            }
            Op::ScalarAdd(_) => vec![needs[0].then(|| dout.to_vec())],
            Op::MatMul => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                let da = needs[0].then(|| {
                    let bt = kernels::transpose(b.data(), k, n);
                    kernels::matmul(dout, &bt, m, n, k)
                });
                let db = needs[1].then(|| {
                    let at = kernels::transpose(a.data(), m, k);
                    kernels::matmul(&at, dout, k, m, n)
                });
                vec![da, db]
            }
            Op::Transpose2d => {
                let (n, m) = (output.shape()[0], output.shape()[1]);
                vec![needs[0].then(|| kernels::transpose(dout, n, m))]
            }
            Op::Conv2d { stride, pad } => conv2d_backward(inputs, output, dout, needs, *stride, *pad),
            Op::TConv2d { stride, pad } => tconv2d_backward(inputs, output, dout, needs, *stride, *pad),
            Op::Relu => {
                let x = inputs[0].data();
                vec![needs[0].then(|| {
                    dout.iter()
                        .zip(x)
                        .map(|(&d, &xv)| if xv > T::zero() { d } else { T::zero() })
                        .collect()
                })]
            }
            Op::Sigmoid => {
                let y = output.data();
                vec![needs[0].then(|| {
                    dout.iter().zip(y).map(|(&d, &yv)| d * yv * (T::one() - yv)).collect()
                })]
            }
            Op::Tanh => {
                let y = output.data();
                vec![needs[0].then(|| {
                    dout.iter().zip(y).map(|(&d, &yv)| d * (T::one() - yv * yv)).collect()
                })]
            }
            Op::Softplus => {
                let x = inputs[0].data();
                vec![needs[0].then(|| {
                    dout.iter().zip(x).map(|(&d, &xv)| d * sigmoid_stable(xv)).collect()
                })]
            }
            Op::Exp => {
                let y = output.data();
                vec![needs[0].then(|| dout.iter().zip(y).map(|(&d, &yv)| d * yv).collect())]
            }
            Op::Log => {
                let x = inputs[0].data();
                vec![needs[0].then(|| dout.iter().zip(x).map(|(&d, &xv)| d / xv).collect())]
            }
            Op::SumAll => {
                vec![needs[0].then(|| vec![dout[0]; inputs[0].numel()])]
            }
            Op::MeanAll => {
                let n = inputs[0].numel();
                vec![needs[0].then(|| vec![dout[0] * r(1.0 / n as f64); n])]
            }
            Op::SumAxis(axis) | Op::MeanAxis(axis) => {
                let scale = match self {
                    Op::MeanAxis(_) => r::<T>(1.0 / inputs[0].shape()[*axis] as f64),
                    _ => T::one(),
                };
                let (outer, d, inner) = lane_dims(inputs[0].shape(), *axis);
                vec![needs[0].then(|| {
                    let mut g = vec![T::zero(); inputs[0].numel()];
                    for o in 0..outer {
                        for k in 0..d {
                            for i in 0..inner {
                                g[(o * d + k) * inner + i] = dout[o * inner + i] * scale;
                            }
                        }
                    }
                    g
                })]
            }
            Op::Softmax(axis) => {
                let y = output.data();
                let (outer, d, inner) = lane_dims(output.shape(), *axis);
                vec![needs[0].then(|| {
                    let mut g = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * d + k) * inner + i;
                            let mut dot = T::zero();
                            for k in 0..d {
                                dot = dot + dout[at(k)] * y[at(k)];
                            }
                            for k in 0..d {
                                g[at(k)] = y[at(k)] * (dout[at(k)] - dot);
                            }
                        }
                    }
                    g
                })]
            }
            Op::GroupNorm { groups, mean, rstd } => {
                group_norm_backward(inputs, dout, needs, *groups, mean, rstd)
            }
            Op::Concat(axis) => {
                let shape = output.shape();
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let row_total = shape[*axis] * inner;
                let mut grads = Vec::with_capacity(inputs.len());
                let mut offset = 0usize;
                for (idx, p) in inputs.iter().enumerate() {
                    let a = p.shape()[*axis];
                    let row = a * inner;
                    let g = needs[idx].then(|| {
                        let mut g = vec![T::zero(); p.numel()];
                        for o in 0..outer {
                            g[o * row..(o + 1) * row].copy_from_slice(
                                &dout[o * row_total + offset..o * row_total + offset + row],
                            );
                        }
                        g
                    });
                    grads.push(g);
                    offset += row;
                }
                grads
            }
            Op::Slice { axis, start, end } => {
                let in_shape = inputs[0].shape();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let outer: usize = in_shape[..*axis].iter().product();
                let a = in_shape[*axis];
                let row = (end - start) * inner;
                vec![needs[0].then(|| {
                    let mut g = vec![T::zero(); inputs[0].numel()];
                    for o in 0..outer {
                        g[(o * a + start) * inner..(o * a + end) * inner]
                            .copy_from_slice(&dout[o * row..(o + 1) * row]);
                    }
                    g
                })]
            }
            Op::Reshape => vec![needs[0].then(|| dout.to_vec())],
            Op::UpsampleNearest2 => {
                let (c, h, w) = (
                    inputs[0].shape()[0],
                    inputs[0].shape()[1],
                    inputs[0].shape()[2],
                );
                vec![needs[0].then(|| {
                    let mut g = vec![T::zero(); c * h * w];
                    for ci in 0..c {
                        for y in 0..2 * h {
                            let grow = &mut g[(ci * h + y / 2) * w..][..w];
                            let drow = &dout[(ci * 2 * h + y) * 2 * w..][..2 * w];
                            for xx in 0..2 * w {
                                grow[xx / 2] = grow[xx / 2] + drow[xx];
                            }
                        }
                    }
                    g
                })]
            }
            Op::AvgPool2 => {
                let (c, h, w) = (
                    inputs[0].shape()[0],
                    inputs[0].shape()[1],
                    inputs[0].shape()[2],
                );
                let (ho, wo) = (h / 2, w / 2);
                let quarter = r::<T>(0.25);
                vec![needs[0].then(|| {
                    let mut g = vec![T::zero(); c * h * w];
                    for ci in 0..c {
                        for y in 0..ho {
                            for xx in 0..wo {
                                let d = dout[(ci * ho + y) * wo + xx] * quarter;
                                let base = (ci * h + 2 * y) * w + 2 * xx;
                                g[base] = g[base] + d;
                                g[base + 1] = g[base + 1] + d;
                                g[base + w] = g[base + w] + d;
                                g[base + w + 1] = g[base + w + 1] + d;
                            }
                        }
                    }
                    g
                })]
            }
            Op::L2Norm => {
                let x = inputs[0].data();
                let norm = output.data()[0];
                let denom = norm.max(r(1e-12));
                vec![needs[0].then(|| x.iter().map(|&xv| dout[0] * xv / denom).collect())]
            }
            Op::PixelNorm { eps } => {
                let x = inputs[0].data();
                let c = inputs[0].shape()[0];
                let spatial = inputs[0].numel() / c;
                vec![needs[0].then(|| {
                    let mut g = vec![T::zero(); x.len()];
                    for i in 0..spatial {
                        let mut sq = 0.0f64;
                        let mut dot = 0.0f64;
                        for ch in 0..c {
                            let idx = ch * spatial + i;
                            let xv = x[idx].as_f64();
                            sq += xv * xv;
                            dot += dout[idx].as_f64() * xv;
                        }
                        let n2 = sq + eps;
                        let n = n2.sqrt();
                        let inv_n = 1.0 / n;
                        let inv_n3 = 1.0 / (n2 * n);
                        for ch in 0..c {
                            let idx = ch * spatial + i;
                            let gv = dout[idx].as_f64() * inv_n - x[idx].as_f64() * dot * inv_n3;
                            g[idx] = r(gv);
                        }
                    }
                    g
                })]
            }
            Op::Custom(op) => op.backward(inputs, output, dout, needs),
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::ScalarMul(_) => "scalar-mul",
            Op::ScalarAdd(_) => "scalar-add",
            Op::MatMul => "matmul",
            Op::Transpose2d => "transpose2d",
            Op::Conv2d { .. } => "conv2d",
            Op::TConv2d { .. } => "transposed-conv2d",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Softplus => "softplus",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::SumAll => "sum",
            Op::MeanAll => "mean",
            Op::SumAxis(_) => "sum-axis",
            Op::MeanAxis(_) => "mean-axis",
            Op::Softmax(_) => "softmax",
            Op::GroupNorm { .. } => "group-norm",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape => "reshape",
            Op::UpsampleNearest2 => "nearest-upsample-x2",
            Op::AvgPool2 => "avgpool-x2",
            Op::L2Norm => "l2-norm",
            Op::PixelNorm { .. } => "pixel-norm",
            Op::Custom(op) => op.name(),
        }
    }
}

/// Sum `dout` (shaped like lhs) down to the rhs shape; optionally multiply by
/// the lhs values first (for `mul` backward).
fn reduce_to_rhs<T: Real>(
    dout: &[T],
    lhs_shape: &[usize],
    rhs_shape: &[usize],
    lhs_data: Option<&[T]>,
) -> Vec<T> {
    let rhs_numel: usize = rhs_shape.iter().product();
    if lhs_shape == rhs_shape {
        return match lhs_data {
            None => dout.to_vec(),
            Some(a) => dout.iter().zip(a).map(|(&d, &av)| d * av).collect(),
        };
    }
    let strides = broadcast_strides(lhs_shape, rhs_shape).unwrap();
    let mut g = vec![T::zero(); rhs_numel];
    match lhs_data {
        None => for_each_pair(lhs_shape, &strides, |li, ri| g[ri] = g[ri] + dout[li]),
        Some(a) => for_each_pair(lhs_shape, &strides, |li, ri| g[ri] = g[ri] + dout[li] * a[li]),
    }
    g
}

fn conv2d_backward<T: Real>(
    inputs: &[Tensor<T>],
    output: &Tensor<T>,
    dout: &[T],
    needs: &[bool],
    stride: usize,
    pad: usize,
) -> Vec<Option<Vec<T>>> {
    let x = &inputs[0];
    let w = &inputs[1];
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (output.shape()[1], output.shape()[2]);
    let need_col = needs[1];
    let col = if need_col {
        Some(kernels::im2col(x.data(), cin, h, wd, kh, kw, stride, pad))
    } else {
        None
    };
    let dx = needs[0].then(|| {
        // dcol = w^T * dout_mat, then scatter back
        let wt = kernels::transpose(w.data(), cout, cin * kh * kw);
        let dcol = kernels::matmul(&wt, dout, cin * kh * kw, cout, ho * wo);
        kernels::col2im(&dcol, cin, h, wd, kh, kw, stride, pad)
    });
    let dw = needs[1].then(|| {
        let col = col.as_ref().unwrap();
        let colt = kernels::transpose(col, cin * kh * kw, ho * wo);
        kernels::matmul(dout, &colt, cout, ho * wo, cin * kh * kw)
    });
    let mut grads = vec![dx, dw];
    if inputs.len() == 3 {
        let db = needs[2].then(|| {
            let mut g = vec![T::zero(); cout];
            for c in 0..cout {
                let mut acc = T::zero();
                for v in &dout[c * ho * wo..(c + 1) * ho * wo] {
                    acc = acc + *v;
                }
                g[c] = acc;
            }
            g
        });
        grads.push(db);
    }
    grads
}

fn tconv2d_backward<T: Real>(
    inputs: &[Tensor<T>],
    output: &Tensor<T>,
    dout: &[T],
    needs: &[bool],
    stride: usize,
    pad: usize,
) -> Vec<Option<Vec<T>>> {
    let x = &inputs[0];
    let w = &inputs[1];
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (_, cout, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (output.shape()[1], output.shape()[2]);
    // dout plays the role of a conv input with the same geometry.
    let dcol = if needs[0] || needs[1] {
        Some(kernels::im2col(dout, cout, ho, wo, kh, kw, stride, pad))
    } else {
        None
    };
    let dx = needs[0].then(|| {
        // [Cin, Cout*k*k] x [Cout*k*k, H*W]
        kernels::matmul(w.data(), dcol.as_ref().unwrap(), cin, cout * kh * kw, h * wd)
    });
    let dw = needs[1].then(|| {
        // dW[Cin, Cout*k*k] = x_mat[Cin, H*W] x dcol^T
        let dct = kernels::transpose(dcol.as_ref().unwrap(), cout * kh * kw, h * wd);
        kernels::matmul(x.data(), &dct, cin, h * wd, cout * kh * kw)
    });
    let mut grads = vec![dx, dw];
    if inputs.len() == 3 {
        let db = needs[2].then(|| {
            let mut g = vec![T::zero(); cout];
            for c in 0..cout {
                let mut acc = T::zero();
                for v in &dout[c * ho * wo..(c + 1) * ho * wo] {
                    acc = acc + *v;
                }
                g[c] = acc;
            }
            g
        });
        grads.push(db);
    }
    grads
}

fn group_norm_backward<T: Real>(
    inputs: &[Tensor<T>],
    dout: &[T],
    needs: &[bool],
    groups: usize,
    mean: &[T],
    rstd: &[T],
) -> Vec<Option<Vec<T>>> {
    let x = inputs[0].data();
    let gamma = inputs[1].data();
    let c = inputs[0].shape()[0];
    let spatial = inputs[0].numel() / c;
    let per_group = (c / groups) * spatial;

    let dx = needs[0].then(|| {
        let mut g = vec![T::zero(); x.len()];
        for grp in 0..groups {
            let lo = grp * per_group;
            let hi = lo + per_group;
            let (mu, rs) = (mean[grp], rstd[grp]);
            let mut s1 = 0.0f64;
            let mut s2 = 0.0f64;
            for idx in lo..hi {
                let ch = idx / spatial;
                let dxhat = (dout[idx] * gamma[ch]).as_f64();
                let xhat = ((x[idx] - mu) * rs).as_f64();
                s1 += dxhat;
                s2 += dxhat * xhat;
            }
            let n = per_group as f64;
            for idx in lo..hi {
                let ch = idx / spatial;
                let dxhat = (dout[idx] * gamma[ch]).as_f64();
                let xhat = ((x[idx] - mu) * rs).as_f64();
                g[idx] = r(rs.as_f64() * (dxhat - s1 / n - xhat * s2 / n));
            }
        }
        g
    });
    let dgamma = needs[1].then(|| {
        let mut g = vec![T::zero(); c];
        for ch in 0..c {
            let grp = ch / (c / groups);
            let (mu, rs) = (mean[grp], rstd[grp]);
            let mut acc = T::zero();
            for i in 0..spatial {
                let idx = ch * spatial + i;
                acc = acc + dout[idx] * (x[idx] - mu) * rs;
            }
            g[ch] = acc;
        }
        g
    });
    let dbeta = needs[2].then(|| {
        let mut g = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for i in 0..spatial {
                acc = acc + dout[ch * spatial + i];
            }
            g[ch] = acc;
        }
        g
    });
    vec![dx, dgamma, dbeta]
}

// ---------------------------------------------------------------------------
// dynamic dispatch entry

/// Identifier for the dynamic [`forward_op`] entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpId {
    Add,
    Sub,
    Mul,
    ScalarMul,
    ScalarAdd,
    MatMul,
    Transpose2d,
    Conv2d,
    TConv2d,
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Log,
    Sum,
    Mean,
    Softmax,
    GroupNorm,
    Concat,
    Slice,
    Reshape,
    UpsampleNearest2,
    AvgPool2,
    L2Norm,
    PixelNorm,
}

impl OpId {
    pub const ALL: [OpId; 26] = [
        OpId::Add,
        OpId::Sub,
        OpId::Mul,
        OpId::ScalarMul,
        OpId::ScalarAdd,
        OpId::MatMul,
        OpId::Transpose2d,
        OpId::Conv2d,
        OpId::TConv2d,
        OpId::Relu,
        OpId::Sigmoid,
        OpId::Tanh,
        OpId::Softplus,
        OpId::Exp,
        OpId::Log,
        OpId::Sum,
        OpId::Mean,
        OpId::Softmax,
        OpId::GroupNorm,
        OpId::Concat,
        OpId::Slice,
        OpId::Reshape,
        OpId::UpsampleNearest2,
        OpId::AvgPool2,
        OpId::L2Norm,
        OpId::PixelNorm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpId::Add => "add",
            OpId::Sub => "sub",
            OpId::Mul => "mul",
            OpId::ScalarMul => "scalar-mul",
            OpId::ScalarAdd => "scalar-add",
            OpId::MatMul => "matmul",
            OpId::Transpose2d => "transpose2d",
            OpId::Conv2d => "conv2d",
            OpId::TConv2d => "transposed-conv2d",
            OpId::Relu => "relu",
            OpId::Sigmoid => "sigmoid",
            OpId::Tanh => "tanh",
            OpId::Softplus => "softplus",
            OpId::Exp => "exp",
            OpId::Log => "log",
            OpId::Sum => "sum",
            OpId::Mean => "mean",
            OpId::Softmax => "softmax",
            OpId::GroupNorm => "group-norm",
            OpId::Concat => "concat",
            OpId::Slice => "slice",
            OpId::Reshape => "reshape",
            OpId::UpsampleNearest2 => "nearest-upsample-x2",
            OpId::AvgPool2 => "avgpool-x2",
            OpId::L2Norm => "l2-norm",
            OpId::PixelNorm => "pixel-norm",
        }
    }
}

impl std::str::FromStr for OpId {
    type Err = TensorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpId::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| TensorError::UnknownOp(s.to_string()))
    }
}

/// Attributes for [`forward_op`].
#[derive(Debug, Clone, Default)]
pub struct OpAttrs {
    pub scalar: f64,
    pub stride: usize,
    pub pad: usize,
    pub axis: usize,
    pub start: usize,
    pub end: usize,
    pub shape: Option<Vec<usize>>,
    pub eps: f64,
}

/// Dynamic op dispatch: validates inputs, runs the op, checks finiteness.
pub fn forward_op<T: Real>(
    op: OpId,
    inputs: &[Tensor<T>],
    attrs: &OpAttrs,
) -> Result<Tensor<T>, TensorError> {
    let arity_err = |want: &str| TensorError::ShapeMismatch {
        op: op.name().to_string(),
        details: format!("expected {want} inputs, got {}", inputs.len()),
    };
    let check = |cond: bool, details: String| -> Result<(), TensorError> {
        if cond {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                op: op.name().to_string(),
                details,
            })
        }
    };
    let out = match op {
        OpId::Add | OpId::Sub | OpId::Mul => {
            if inputs.len() != 2 {
                return Err(arity_err("2"));
            }
            check(
                broadcast_strides(inputs[0].shape(), inputs[1].shape()).is_some(),
                format!("{:?} vs {:?}", inputs[0].shape(), inputs[1].shape()),
            )?;
            match op {
                OpId::Add => inputs[0].add(&inputs[1]),
                OpId::Sub => inputs[0].sub(&inputs[1]),
                _ => inputs[0].mul(&inputs[1]),
            }
        }
        OpId::ScalarMul => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            inputs[0].scalar_mul(r(attrs.scalar))
        }
        OpId::ScalarAdd => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            inputs[0].scalar_add(r(attrs.scalar))
        }
        OpId::MatMul => {
            if inputs.len() != 2 {
                return Err(arity_err("2"));
            }
            check(
                inputs[0].rank() == 2
                    && inputs[1].rank() == 2
                    && inputs[0].shape()[1] == inputs[1].shape()[0],
                format!("{:?} x {:?}", inputs[0].shape(), inputs[1].shape()),
            )?;
            inputs[0].matmul(&inputs[1])
        }
        OpId::Transpose2d => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            check(inputs[0].rank() == 2, format!("{:?}", inputs[0].shape()))?;
            inputs[0].transpose2d()
        }
        OpId::Conv2d | OpId::TConv2d => {
            if inputs.len() != 2 && inputs.len() != 3 {
                return Err(arity_err("2 or 3"));
            }
            check(
                inputs[0].rank() == 3 && inputs[1].rank() == 4,
                format!("x {:?}, w {:?}", inputs[0].shape(), inputs[1].shape()),
            )?;
            let stride = attrs.stride.max(1);
            let bias = inputs.get(2);
            if op == OpId::Conv2d {
                check(
                    inputs[0].shape()[0] == inputs[1].shape()[1],
                    "input channels must match weight Cin".to_string(),
                )?;
                inputs[0].conv2d(&inputs[1], bias, stride, attrs.pad)
            } else {
                check(
                    inputs[0].shape()[0] == inputs[1].shape()[0],
                    "input channels must match weight Cin".to_string(),
                )?;
                inputs[0].tconv2d(&inputs[1], bias, stride, attrs.pad)
            }
        }
        OpId::Relu | OpId::Sigmoid | OpId::Tanh | OpId::Softplus | OpId::Exp | OpId::Log => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            match op {
                OpId::Relu => inputs[0].relu(),
                OpId::Sigmoid => inputs[0].sigmoid(),
                OpId::Tanh => inputs[0].tanh(),
                OpId::Softplus => inputs[0].softplus(),
                OpId::Exp => inputs[0].exp(),
                _ => inputs[0].log(),
            }
        }
        OpId::Sum => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            inputs[0].sum_all()
        }
        OpId::Mean => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            inputs[0].mean_all()
        }
        OpId::Softmax => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            check(attrs.axis < inputs[0].rank(), format!("axis {}", attrs.axis))?;
            inputs[0].softmax(attrs.axis)
        }
        OpId::GroupNorm => {
            if inputs.len() != 3 {
                return Err(arity_err("3"));
            }
            let c = inputs[0].shape()[0];
            check(
                inputs[1].shape() == [c] && inputs[2].shape() == [c],
                "gamma/beta must be [C]".to_string(),
            )?;
            inputs[0].group_norm(&inputs[1], &inputs[2])
        }
        OpId::Concat => {
            if inputs.is_empty() {
                return Err(arity_err(">= 1"));
            }
            check(attrs.axis < inputs[0].rank(), format!("axis {}", attrs.axis))?;
            let refs: Vec<&Tensor<T>> = inputs.iter().collect();
            Tensor::concat(&refs, attrs.axis)
        }
        OpId::Slice => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            check(
                attrs.axis < inputs[0].rank()
                    && attrs.start < attrs.end
                    && attrs.end <= inputs[0].shape()[attrs.axis],
                format!("slice [{}, {}) axis {}", attrs.start, attrs.end, attrs.axis),
            )?;
            inputs[0].slice(attrs.axis, attrs.start, attrs.end)
        }
        OpId::Reshape => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            let shape = attrs.shape.clone().ok_or_else(|| TensorError::ShapeMismatch {
                op: "reshape".into(),
                details: "missing target shape".into(),
            })?;
            check(
                shape.iter().product::<usize>() == inputs[0].numel(),
                format!("{:?} -> {:?}", inputs[0].shape(), shape),
            )?;
            inputs[0].reshape(&shape)
        }
        OpId::UpsampleNearest2 => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            check(inputs[0].rank() == 3, format!("{:?}", inputs[0].shape()))?;
            inputs[0].upsample_nearest_x2()
        }
        OpId::AvgPool2 => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            check(
                inputs[0].rank() == 3 && inputs[0].shape()[1] % 2 == 0 && inputs[0].shape()[2] % 2 == 0,
                format!("{:?}", inputs[0].shape()),
            )?;
            inputs[0].avgpool_x2()
        }
        OpId::L2Norm => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            inputs[0].l2_norm()
        }
        OpId::PixelNorm => {
            if inputs.len() != 1 {
                return Err(arity_err("1"));
            }
            inputs[0].pixel_norm(if attrs.eps > 0.0 { attrs.eps } else { 1e-10 })
        }
    };
    if !out.is_finite() {
        return Err(TensorError::NonFinite {
            op: op.name().to_string(),
        });
    }
    Ok(out)
}
