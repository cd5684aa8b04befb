//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive in execution order. Each node owns its
//! output value; [`Tape::backward`] walks the nodes once in reverse and
//! accumulates gradients. Complex tensors are differentiated as independent
//! `(re, im)` channels: the gradient of a complex leaf is stored interleaved as
//! `(∂L/∂re, ∂L/∂im)`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::bspline::KnotVector;
use crate::fft;
use crate::tensor::{axis_split, broadcast_map, numel, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Sigmoid,
    Relu,
    Gelu,
}

#[derive(Clone, Copy, Debug)]
enum LineTransform {
    Forward,
    Inverse,
    Adjoint,
    ForwardScaled,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add { a: Var, b: Var, map: Option<Arc<Vec<usize>>> },
    Mul { a: Var, b: Var, map: Option<Arc<Vec<usize>>> },
    Scale { a: Var, c: f64 },
    MatMul { a: Var, b: Var },
    ComplexMatMul { a: Var, w: Var },
    Dft { a: Var, axis: usize },
    Idft { a: Var, axis: usize },
    RealPart { a: Var },
    HermitianPad { a: Var, axis: usize },
    Softmax { a: Var },
    Unary { a: Var, act: Activation },
    MeanPool { a: Var },
    Sum { a: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Transpose { a: Var, perm: Vec<usize> },
    Reshape { a: Var },
    BroadcastTo { a: Var, map: Arc<Vec<usize>> },
    AvgPool { a: Var, sx: usize, sy: usize },
    Upsample { a: Var, sx: usize, sy: usize },
    KanLayer { x: Var, coef: Var, wb: Var, ws: Var, knots: Arc<[KnotVector]> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients indexed by tape node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| like.zeros_like())
    }
}

#[derive(Default, Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Upper bound on `sup |gelu'|` (the supremum is ≈ 1.1289).
pub const GELU_LIPSCHITZ: f64 = 1.13;

fn activate(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Silu => silu(x),
        Activation::Sigmoid => sigmoid(x),
        Activation::Relu => x.max(0.0),
        Activation::Gelu => gelu(x),
    }
}

fn activate_prime(act: Activation, x: f64, y: f64) -> f64 {
    match act {
        Activation::Silu => silu_prime(x),
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Gelu => gelu_prime(x),
    }
}

fn transform_lines(data: &[f64], complex: bool, shape: &[usize], axis: usize, kind: LineTransform) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; 2 * numel(shape)];
    let mut line = vec![Complex64::new(0.0, 0.0); len];
    for o in 0..outer {
        for i in 0..inner {
            for (l, slot) in line.iter_mut().enumerate() {
                let idx = (o * len + l) * inner + i;
                *slot = if complex {
                    Complex64::new(data[2 * idx], data[2 * idx + 1])
                } else {
                    Complex64::new(data[idx], 0.0)
                };
            }
            match kind {
                LineTransform::Forward => fft::fft(&mut line),
                LineTransform::Inverse => fft::ifft(&mut line),
                LineTransform::Adjoint => fft::fft_adjoint(&mut line),
                LineTransform::ForwardScaled => {
                    fft::fft(&mut line);
                    let s = 1.0 / len as f64;
                    line.iter_mut().for_each(|v| *v *= s);
                }
            }
            for (l, v) in line.iter().enumerate() {
                let idx = (o * len + l) * inner + i;
                out[2 * idx] = v.re;
                out[2 * idx + 1] = v.im;
            }
        }
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for ax in (0..shape.len().saturating_sub(1)).rev() {
        s[ax] = s[ax + 1] * shape[ax + 1];
    }
    s
}

/// For each flat index of the permuted output, the flat index in the input.
fn transpose_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let n = numel(&out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        map.push((0..rank).map(|ax| idx[ax] * in_strides[perm[ax]]).sum());
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}

/// Periodic bilinear weights for upsampling one axis of length `n` by `s`,
/// with cell-centred alignment.
fn upsample_weights(n: usize, s: usize) -> Vec<[(usize, f64); 2]> {
    (0..n * s)
        .map(|i| {
            let pos = (i as f64 + 0.5) / s as f64 - 0.5;
            let j0 = pos.floor();
            let frac = pos - j0;
            let j0 = (j0 as i64).rem_euclid(n as i64) as usize;
            [(j0, 1.0 - frac), ((j0 + 1) % n, frac)]
        })
        .collect()
}

fn elem_size(complex: bool) -> usize {
    if complex {
        2
    } else {
        1
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.is_complex() != vb.is_complex() {
            return Err(TensorError::contract("add", "mixed real/complex operands"));
        }
        let es = elem_size(va.is_complex());
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
            let out = check_finite("add", Tensor::from_raw(va.shape().to_vec(), data, va.is_complex()))?;
            return Ok(self.push(out, Op::Add { a, b, map: None }));
        }
        let map = broadcast_map("add", va.shape(), vb.shape())?;
        let mut data = va.data().to_vec();
        for (i, &j) in map.iter().enumerate() {
            for c in 0..es {
                data[es * i + c] += vb.data()[es * j + c];
            }
        }
        let out = check_finite("add", Tensor::from_raw(va.shape().to_vec(), data, va.is_complex()))?;
        Ok(self.push(out, Op::Add { a, b, map: Some(Arc::new(map)) }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Elementwise product; `b` may broadcast and may be real when `a` is complex.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.is_complex() && vb.is_complex() {
            return Err(TensorError::contract("mul", "complex rhs requires complex lhs"));
        }
        let map = if va.shape() == vb.shape() {
            None
        } else {
            Some(Arc::new(broadcast_map("mul", va.shape(), vb.shape())?))
        };
        let n = va.numel();
        let ad = va.data();
        let bd = vb.data();
        let bidx = |i: usize| map.as_ref().map_or(i, |m| m[i]);
        let data = match (va.is_complex(), vb.is_complex()) {
            (false, false) => (0..n).map(|i| ad[i] * bd[bidx(i)]).collect(),
            (true, false) => {
                let mut d = vec![0.0; 2 * n];
                for i in 0..n {
                    let s = bd[bidx(i)];
                    d[2 * i] = ad[2 * i] * s;
                    d[2 * i + 1] = ad[2 * i + 1] * s;
                }
                d
            }
            _ => {
                let mut d = vec![0.0; 2 * n];
                for i in 0..n {
                    let j = bidx(i);
                    let x = Complex64::new(ad[2 * i], ad[2 * i + 1]);
                    let y = Complex64::new(bd[2 * j], bd[2 * j + 1]);
                    let z = x * y;
                    d[2 * i] = z.re;
                    d[2 * i + 1] = z.im;
                }
                d
            }
        };
        let out = check_finite("mul", Tensor::from_raw(va.shape().to_vec(), data, va.is_complex()))?;
        Ok(self.push(out, Op::Mul { a, b, map }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * c).collect();
        let out = check_finite("scale", Tensor::from_raw(va.shape().to_vec(), data, va.is_complex()))?;
        Ok(self.push(out, Op::Scale { a, c }))
    }

    /// `[M, K] × [K, N] → [M, N]`, real operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.is_complex() || vb.is_complex() || va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(TensorError::mismatch("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let out = matmul_kernel(va.data(), vb.data(), m, k, n);
        let out = check_finite("matmul", Tensor::from_raw(vec![m, n], out, false))?;
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    /// Batched complex product `[B, M, K] × [B, K, N] → [B, M, N]` (rank-2 operands are one batch).
    pub fn complex_matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (va, vw) = (self.value(a), self.value(w));
        let ok = va.is_complex()
            && vw.is_complex()
            && va.rank() == vw.rank()
            && (va.rank() == 2 || (va.rank() == 3 && va.shape()[0] == vw.shape()[0]))
            && va.shape()[va.rank() - 1] == vw.shape()[vw.rank() - 2];
        if !ok {
            return Err(TensorError::mismatch("complex_matmul", va.shape(), vw.shape()));
        }
        let (batch, m, k, n) = cm_dims(va.shape(), vw.shape());
        let mut out = vec![0.0; 2 * batch * m * n];
        for bi in 0..batch {
            let a_off = 2 * bi * m * k;
            let w_off = 2 * bi * k * n;
            let o_off = 2 * bi * m * n;
            complex_matmul_kernel(
                &va.data()[a_off..a_off + 2 * m * k],
                &vw.data()[w_off..w_off + 2 * k * n],
                &mut out[o_off..o_off + 2 * m * n],
                m,
                k,
                n,
                false,
                false,
            );
        }
        let mut shape = va.shape().to_vec();
        let last = shape.len() - 1;
        shape[last] = n;
        let out = check_finite("complex_matmul", Tensor::from_raw(shape, out, true))?;
        Ok(self.push(out, Op::ComplexMatMul { a, w }))
    }

    /// Forward DFT along `axis`; real inputs are promoted to complex.
    pub fn dft_1d(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.rank() || va.shape()[axis] == 0 {
            return Err(TensorError::contract("dft_1d", format!("invalid axis {axis} for {:?}", va.shape())));
        }
        let out = transform_lines(va.data(), va.is_complex(), va.shape(), axis, LineTransform::Forward);
        let out = check_finite("dft_1d", Tensor::from_raw(va.shape().to_vec(), out, true))?;
        Ok(self.push(out, Op::Dft { a, axis }))
    }

    /// Inverse DFT (with `1/N`) along `axis`; output is complex.
    pub fn idft_1d(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.rank() || va.shape()[axis] == 0 {
            return Err(TensorError::contract("idft_1d", format!("invalid axis {axis} for {:?}", va.shape())));
        }
        let out = transform_lines(va.data(), va.is_complex(), va.shape(), axis, LineTransform::Inverse);
        let out = check_finite("idft_1d", Tensor::from_raw(va.shape().to_vec(), out, true))?;
        Ok(self.push(out, Op::Idft { a, axis }))
    }

    pub fn real_part(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if !va.is_complex() {
            return Err(TensorError::contract("real_part", "operand is real"));
        }
        let data = va.data().chunks(2).map(|c| c[0]).collect();
        let out = Tensor::from_raw(va.shape().to_vec(), data, false);
        Ok(self.push(out, Op::RealPart { a }))
    }

    /// Expands `m` retained low modes along `axis` to a Hermitian-symmetric
    /// spectrum of length `n`: bin `k` keeps mode `k`, bin `n-k` receives its
    /// conjugate, and the self-conjugate bins (0 and `n/2`) keep the real part.
    /// Requires `m ≤ n/2 + 1`.
    pub fn hermitian_pad(&mut self, a: Var, axis: usize, n: usize) -> Result<Var> {
        let va = self.value(a);
        if !va.is_complex() || axis >= va.rank() {
            return Err(TensorError::contract("hermitian_pad", "complex operand with valid axis required"));
        }
        let m = va.shape()[axis];
        if m == 0 || m > n / 2 + 1 {
            return Err(TensorError::contract("hermitian_pad", format!("{m} modes do not fit length {n}")));
        }
        let (outer, _, inner) = axis_split(va.shape(), axis);
        let mut shape = va.shape().to_vec();
        shape[axis] = n;
        let mut out = vec![0.0; 2 * numel(&shape)];
        let src = va.data();
        for o in 0..outer {
            for i in 0..inner {
                for k in 0..m {
                    let s = (o * m + k) * inner + i;
                    let (re, im) = (src[2 * s], src[2 * s + 1]);
                    let d = (o * n + k) * inner + i;
                    if k == 0 || 2 * k == n {
                        out[2 * d] = re;
                    } else {
                        out[2 * d] = re;
                        out[2 * d + 1] = im;
                        let dm = (o * n + (n - k)) * inner + i;
                        out[2 * dm] = re;
                        out[2 * dm + 1] = -im;
                    }
                }
            }
        }
        let out = Tensor::from_raw(shape, out, true);
        Ok(self.push(out, Op::HermitianPad { a, axis }))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_complex() || va.rank() == 0 {
            return Err(TensorError::contract("softmax", "real tensor of rank >= 1 required"));
        }
        let n = *va.shape().last().unwrap();
        let mut out = va.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = check_finite("softmax", Tensor::from_raw(va.shape().to_vec(), out, false))?;
        Ok(self.push(out, Op::Softmax { a }))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let va = self.value(a);
        if va.is_complex() {
            return Err(TensorError::contract("activation", "real operand required"));
        }
        let data = va.data().iter().map(|&x| activate(act, x)).collect();
        let out = check_finite("activation", Tensor::from_raw(va.shape().to_vec(), data, false))?;
        Ok(self.push(out, Op::Unary { a, act }))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Silu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Gelu)
    }

    /// Mean over every axis but the last: `[..., C] → [C]`.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_complex() || va.rank() == 0 {
            return Err(TensorError::contract("mean_pool", "real tensor of rank >= 1 required"));
        }
        let c = *va.shape().last().unwrap();
        let count = va.numel() / c.max(1);
        if count == 0 {
            return Err(TensorError::contract("mean_pool", "empty pooling region"));
        }
        let mut out = vec![0.0; c];
        for row in va.data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= count as f64);
        let out = check_finite("mean_pool", Tensor::from_raw(vec![c], out, false))?;
        Ok(self.push(out, Op::MeanPool { a }))
    }

    /// Sum of all entries to a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_complex() {
            return Err(TensorError::contract("sum", "real operand required"));
        }
        let s: f64 = va.data().iter().sum();
        let out = check_finite("sum", Tensor::scalar(s))?;
        Ok(self.push(out, Op::Sum { a }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| TensorError::contract("concat", "no operands"))?);
        let complex = first.is_complex();
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::contract("concat", format!("axis {axis} out of range")));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &p in parts {
            let vp = self.value(p);
            let compatible = vp.rank() == rank
                && vp.is_complex() == complex
                && (0..rank).all(|ax| ax == axis || vp.shape()[ax] == first.shape()[ax]);
            if !compatible {
                return Err(TensorError::mismatch("concat", first.shape(), vp.shape()));
            }
            shape[axis] += vp.shape()[axis];
        }
        let es = elem_size(complex);
        let (outer, total, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; es * numel(&shape)];
        let mut offset = 0;
        for &p in parts {
            let vp = self.value(p);
            let len = vp.shape()[axis];
            let chunk = es * len * inner;
            for o in 0..outer {
                let dst = es * (o * total + offset) * inner;
                out[dst..dst + chunk].copy_from_slice(&vp.data()[o * chunk..(o + 1) * chunk]);
            }
            offset += len;
        }
        let out = Tensor::from_raw(shape, out, complex);
        Ok(self.push(out, Op::Concat { parts: parts.to_vec(), axis }))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.rank() || start + len > va.shape()[axis] {
            return Err(TensorError::contract(
                "slice",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, va.shape()),
            ));
        }
        let es = elem_size(va.is_complex());
        let (outer, full, inner) = axis_split(va.shape(), axis);
        let mut shape = va.shape().to_vec();
        shape[axis] = len;
        let chunk = es * len * inner;
        let mut out = Vec::with_capacity(outer * chunk);
        for o in 0..outer {
            let src = es * (o * full + start) * inner;
            out.extend_from_slice(&va.data()[src..src + chunk]);
        }
        let out = Tensor::from_raw(shape, out, va.is_complex());
        Ok(self.push(out, Op::Slice { a, axis, start }))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn transpose(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let mut seen = vec![false; va.rank()];
        if perm.len() != va.rank() || perm.iter().any(|&p| p >= va.rank() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::contract("transpose", format!("invalid permutation {perm:?} for {:?}", va.shape())));
        }
        let es = elem_size(va.is_complex());
        let map = transpose_map(va.shape(), perm);
        let mut out = vec![0.0; va.data().len()];
        for (i, &j) in map.iter().enumerate() {
            out[es * i..es * i + es].copy_from_slice(&va.data()[es * j..es * j + es]);
        }
        let shape = perm.iter().map(|&p| va.shape()[p]).collect();
        let out = Tensor::from_raw(shape, out, va.is_complex());
        Ok(self.push(out, Op::Transpose { a, perm: perm.to_vec() }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape { a }))
    }

    /// One-sided broadcast to `shape` (extents of `a` must be 1 or equal).
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let map = broadcast_map("broadcast_to", shape, va.shape())?;
        let es = elem_size(va.is_complex());
        let mut out = vec![0.0; es * map.len()];
        for (i, &j) in map.iter().enumerate() {
            out[es * i..es * i + es].copy_from_slice(&va.data()[es * j..es * j + es]);
        }
        let out = Tensor::from_raw(shape.to_vec(), out, va.is_complex());
        Ok(self.push(out, Op::BroadcastTo { a, map: Arc::new(map) }))
    }

    /// Block average of an `[X, Y, C]` field over `sx × sy` cells.
    pub fn avg_pool(&mut self, a: Var, sx: usize, sy: usize) -> Result<Var> {
        let va = self.value(a);
        if va.is_complex() || va.rank() != 3 || sx == 0 || sy == 0 || va.shape()[0] % sx != 0 || va.shape()[1] % sy != 0 {
            return Err(TensorError::contract(
                "avg_pool",
                format!("field {:?} not divisible by factors ({sx}, {sy})", va.shape()),
            ));
        }
        let (x, y, c) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let (xc, yc) = (x / sx, y / sy);
        let mut out = vec![0.0; xc * yc * c];
        let w = 1.0 / (sx * sy) as f64;
        for i in 0..x {
            for j in 0..y {
                let dst = ((i / sx) * yc + j / sy) * c;
                let src = (i * y + j) * c;
                for ch in 0..c {
                    out[dst + ch] += w * va.data()[src + ch];
                }
            }
        }
        let out = Tensor::from_raw(vec![xc, yc, c], out, false);
        Ok(self.push(out, Op::AvgPool { a, sx, sy }))
    }

    /// Periodic bilinear upsampling of an `[X, Y, C]` field by `sx × sy`.
    pub fn upsample(&mut self, a: Var, sx: usize, sy: usize) -> Result<Var> {
        let va = self.value(a);
        if va.is_complex() || va.rank() != 3 || sx == 0 || sy == 0 {
            return Err(TensorError::contract("upsample", format!("invalid field {:?}", va.shape())));
        }
        let (xc, yc, c) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let wx = upsample_weights(xc, sx);
        let wy = upsample_weights(yc, sy);
        let y = yc * sy;
        let mut out = vec![0.0; xc * sx * y * c];
        for (i, wxi) in wx.iter().enumerate() {
            for (j, wyj) in wy.iter().enumerate() {
                let dst = (i * y + j) * c;
                for &(si, a_w) in wxi {
                    for &(sj, b_w) in wyj {
                        let w = a_w * b_w;
                        if w == 0.0 {
                            continue;
                        }
                        let src = (si * yc + sj) * c;
                        for ch in 0..c {
                            out[dst + ch] += w * va.data()[src + ch];
                        }
                    }
                }
            }
        }
        let out = Tensor::from_raw(vec![xc * sx, y, c], out, false);
        Ok(self.push(out, Op::Upsample { a, sx, sy }))
    }

    /// One KAN layer: `y_j = Σ_i w_b[j,i] SiLU(x_i) + w_s[j,i] Σ_r c[j,i,r] B_r(x_i; Ξ_i)`.
    ///
    /// Shapes: `x [d_in]`, `coef [d_out, d_in, R]`, `wb, ws [d_out, d_in]`,
    /// one knot vector with `R` basis functions per input coordinate.
    pub fn kan_layer(&mut self, x: Var, coef: Var, wb: Var, ws: Var, knots: Arc<[KnotVector]>) -> Result<Var> {
        let (vx, vc, vb, vs) = (self.value(x), self.value(coef), self.value(wb), self.value(ws));
        let d_in = vx.numel();
        if vx.rank() != 1 || vc.rank() != 3 || vc.shape()[1] != d_in || knots.len() != d_in {
            return Err(TensorError::mismatch("kan_layer", vx.shape(), vc.shape()));
        }
        let (d_out, r) = (vc.shape()[0], vc.shape()[2]);
        if vb.shape() != [d_out, d_in] || vs.shape() != [d_out, d_in] {
            return Err(TensorError::mismatch("kan_layer", vb.shape(), vs.shape()));
        }
        if knots.iter().any(|k| k.num_basis() != r) {
            return Err(TensorError::contract("kan_layer", "knot vectors do not match coefficient count"));
        }
        let mut out = vec![0.0; d_out];
        for i in 0..d_in {
            let xi = vx.data()[i];
            let base = silu(xi);
            let basis = knots[i].basis(xi);
            for (j, o) in out.iter_mut().enumerate() {
                let c = &vc.data()[(j * d_in + i) * r..(j * d_in + i + 1) * r];
                let spline: f64 = c.iter().zip(&basis).map(|(c, b)| c * b).sum();
                *o += vb.data()[j * d_in + i] * base + vs.data()[j * d_in + i] * spline;
            }
        }
        let out = check_finite("kan_layer", Tensor::from_raw(vec![d_out], out, false))?;
        Ok(self.push(out, Op::KanLayer { x, coef, wb, ws, knots }))
    }

    /// Gradients of a scalar node with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.is_complex() || lv.numel() != 1 {
            return Err(TensorError::contract("backward", format!("loss must be a real scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.map(|d| Tensor::from_raw(node.value.shape().to_vec(), d, node.value.is_complex()))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b, map } => {
                accumulate(grads, *a, g.to_vec());
                let vb = self.value(*b);
                match map {
                    None => accumulate(grads, *b, g.to_vec()),
                    Some(m) => {
                        let es = elem_size(vb.is_complex());
                        let mut gb = vec![0.0; vb.data().len()];
                        for (i, &j) in m.iter().enumerate() {
                            for c in 0..es {
                                gb[es * j + c] += g[es * i + c];
                            }
                        }
                        accumulate(grads, *b, gb);
                    }
                }
            }
            Op::Mul { a, b, map } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let n = va.numel();
                let bidx = |i: usize| map.as_ref().map_or(i, |m| m[i]);
                let (ad, bd) = (va.data(), vb.data());
                let mut ga = vec![0.0; ad.len()];
                let mut gb = vec![0.0; bd.len()];
                match (va.is_complex(), vb.is_complex()) {
                    (false, false) => {
                        for i in 0..n {
                            let j = bidx(i);
                            ga[i] = g[i] * bd[j];
                            gb[j] += g[i] * ad[i];
                        }
                    }
                    (true, false) => {
                        for i in 0..n {
                            let j = bidx(i);
                            ga[2 * i] = g[2 * i] * bd[j];
                            ga[2 * i + 1] = g[2 * i + 1] * bd[j];
                            gb[j] += g[2 * i] * ad[2 * i] + g[2 * i + 1] * ad[2 * i + 1];
                        }
                    }
                    _ => {
                        for i in 0..n {
                            let j = bidx(i);
                            let gi = Complex64::new(g[2 * i], g[2 * i + 1]);
                            let x = Complex64::new(ad[2 * i], ad[2 * i + 1]);
                            let y = Complex64::new(bd[2 * j], bd[2 * j + 1]);
                            let dx = gi * y.conj();
                            let dy = gi * x.conj();
                            ga[2 * i] = dx.re;
                            ga[2 * i + 1] = dx.im;
                            gb[2 * j] += dy.re;
                            gb[2 * j + 1] += dy.im;
                        }
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale { a, c } => accumulate(grads, *a, g.iter().map(|v| v * c).collect()),
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // dA = G Bᵀ, dB = Aᵀ G
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * vb.data()[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = va.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let row = &g[i * n..(i + 1) * n];
                        for (dst, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(row) {
                            *dst += av * gv;
                        }
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::ComplexMatMul { a, w } => {
                let (va, vw) = (self.value(*a), self.value(*w));
                let (batch, m, k, n) = cm_dims(va.shape(), vw.shape());
                let mut ga = vec![0.0; va.data().len()];
                let mut gw = vec![0.0; vw.data().len()];
                for bi in 0..batch {
                    let (ao, wo, go) = (2 * bi * m * k, 2 * bi * k * n, 2 * bi * m * n);
                    let gs = &g[go..go + 2 * m * n];
                    let ws = &vw.data()[wo..wo + 2 * k * n];
                    let as_ = &va.data()[ao..ao + 2 * m * k];
                    // dA = G Wᴴ
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = Complex64::new(0.0, 0.0);
                            for j in 0..n {
                                let gv = Complex64::new(gs[2 * (i * n + j)], gs[2 * (i * n + j) + 1]);
                                let wv = Complex64::new(ws[2 * (p * n + j)], ws[2 * (p * n + j) + 1]);
                                s += gv * wv.conj();
                            }
                            ga[ao + 2 * (i * k + p)] = s.re;
                            ga[ao + 2 * (i * k + p) + 1] = s.im;
                        }
                    }
                    // dW = Aᴴ G
                    complex_matmul_kernel(as_, gs, &mut gw[wo..wo + 2 * k * n], k, m, n, true, true);
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *w, gw);
            }
            Op::Dft { a, axis } => {
                let va = self.value(*a);
                let gc = transform_lines(g, true, out.shape(), *axis, LineTransform::Adjoint);
                let ga = if va.is_complex() { gc } else { gc.chunks(2).map(|c| c[0]).collect() };
                accumulate(grads, *a, ga);
            }
            Op::Idft { a, axis } => {
                let va = self.value(*a);
                let gc = transform_lines(g, true, out.shape(), *axis, LineTransform::ForwardScaled);
                let ga = if va.is_complex() { gc } else { gc.chunks(2).map(|c| c[0]).collect() };
                accumulate(grads, *a, ga);
            }
            Op::RealPart { a } => {
                let mut ga = vec![0.0; 2 * g.len()];
                for (i, v) in g.iter().enumerate() {
                    ga[2 * i] = *v;
                }
                accumulate(grads, *a, ga);
            }
            Op::HermitianPad { a, axis } => {
                let va = self.value(*a);
                let m = va.shape()[*axis];
                let n = out.shape()[*axis];
                let (outer, _, inner) = axis_split(va.shape(), *axis);
                let mut ga = vec![0.0; va.data().len()];
                for o in 0..outer {
                    for i in 0..inner {
                        for k in 0..m {
                            let s = (o * m + k) * inner + i;
                            let d = (o * n + k) * inner + i;
                            ga[2 * s] = g[2 * d];
                            if !(k == 0 || 2 * k == n) {
                                let dm = (o * n + (n - k)) * inner + i;
                                ga[2 * s] += g[2 * dm];
                                ga[2 * s + 1] = g[2 * d + 1] - g[2 * dm + 1];
                            }
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Softmax { a } => {
                let n = *out.shape().last().unwrap();
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(n).zip(out.data().chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Unary { a, act } => {
                let va = self.value(*a);
                let ga = g
                    .iter()
                    .zip(va.data())
                    .zip(out.data())
                    .map(|((gv, &x), &y)| gv * activate_prime(*act, x, y))
                    .collect();
                accumulate(grads, *a, ga);
            }
            Op::MeanPool { a } => {
                let va = self.value(*a);
                let c = g.len();
                let count = (va.numel() / c) as f64;
                let ga = (0..va.numel()).map(|i| g[i % c] / count).collect();
                accumulate(grads, *a, ga);
            }
            Op::Sum { a } => {
                let n = self.value(*a).numel();
                accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Concat { parts, axis } => {
                let es = elem_size(out.is_complex());
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    let chunk = es * len * inner;
                    let mut gp = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        let src = es * (o * total + offset) * inner;
                        gp.extend_from_slice(&g[src..src + chunk]);
                    }
                    accumulate(grads, p, gp);
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let va = self.value(*a);
                let es = elem_size(va.is_complex());
                let (outer, full, inner) = axis_split(va.shape(), *axis);
                let len = out.shape()[*axis];
                let chunk = es * len * inner;
                let mut ga = vec![0.0; va.data().len()];
                for o in 0..outer {
                    let dst = es * (o * full + start) * inner;
                    ga[dst..dst + chunk].copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
                }
                accumulate(grads, *a, ga);
            }
            Op::Transpose { a, perm } => {
                let va = self.value(*a);
                let es = elem_size(va.is_complex());
                let map = transpose_map(va.shape(), perm);
                let mut ga = vec![0.0; g.len()];
                for (i, &j) in map.iter().enumerate() {
                    ga[es * j..es * j + es].copy_from_slice(&g[es * i..es * i + es]);
                }
                accumulate(grads, *a, ga);
            }
            Op::Reshape { a } => accumulate(grads, *a, g.to_vec()),
            Op::BroadcastTo { a, map } => {
                let va = self.value(*a);
                let es = elem_size(va.is_complex());
                let mut ga = vec![0.0; va.data().len()];
                for (i, &j) in map.iter().enumerate() {
                    for c in 0..es {
                        ga[es * j + c] += g[es * i + c];
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::AvgPool { a, sx, sy } => {
                let va = self.value(*a);
                let (x, y, c) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let yc = y / sy;
                let w = 1.0 / (sx * sy) as f64;
                let mut ga = vec![0.0; va.data().len()];
                for i in 0..x {
                    for j in 0..y {
                        let src = ((i / sx) * yc + j / sy) * c;
                        let dst = (i * y + j) * c;
                        for ch in 0..c {
                            ga[dst + ch] = w * g[src + ch];
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Upsample { a, sx, sy } => {
                let va = self.value(*a);
                let (xc, yc, c) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let wx = upsample_weights(xc, *sx);
                let wy = upsample_weights(yc, *sy);
                let y = yc * sy;
                let mut ga = vec![0.0; va.data().len()];
                for (i, wxi) in wx.iter().enumerate() {
                    for (j, wyj) in wy.iter().enumerate() {
                        let src = (i * y + j) * c;
                        for &(si, a_w) in wxi {
                            for &(sj, b_w) in wyj {
                                let w = a_w * b_w;
                                if w == 0.0 {
                                    continue;
                                }
                                let dst = (si * yc + sj) * c;
                                for ch in 0..c {
                                    ga[dst + ch] += w * g[src + ch];
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::KanLayer { x, coef, wb, ws, knots } => {
                let (vx, vc, vb, vs) = (self.value(*x), self.value(*coef), self.value(*wb), self.value(*ws));
                let d_in = vx.numel();
                let (d_out, r) = (vc.shape()[0], vc.shape()[2]);
                let mut gx = vec![0.0; d_in];
                let mut gc = vec![0.0; vc.data().len()];
                let mut gb = vec![0.0; d_out * d_in];
                let mut gs = vec![0.0; d_out * d_in];
                for i in 0..d_in {
                    let xi = vx.data()[i];
                    let base = silu(xi);
                    let dbase = silu_prime(xi);
                    let basis = knots[i].basis(xi);
                    let dbasis = knots[i].basis_derivative(xi);
                    for j in 0..d_out {
                        let e = j * d_in + i;
                        let c = &vc.data()[e * r..(e + 1) * r];
                        let spline: f64 = c.iter().zip(&basis).map(|(c, b)| c * b).sum();
                        let dspline: f64 = c.iter().zip(&dbasis).map(|(c, b)| c * b).sum();
                        let (wbv, wsv) = (vb.data()[e], vs.data()[e]);
                        gx[i] += g[j] * (wbv * dbase + wsv * dspline);
                        gb[e] = g[j] * base;
                        gs[e] = g[j] * spline;
                        for (dst, b) in gc[e * r..(e + 1) * r].iter_mut().zip(&basis) {
                            *dst = g[j] * wsv * b;
                        }
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *coef, gc);
                accumulate(grads, *wb, gb);
                accumulate(grads, *ws, gs);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn cm_dims(a: &[usize], w: &[usize]) -> (usize, usize, usize, usize) {
    if a.len() == 3 {
        (a[0], a[1], a[2], w[2])
    } else {
        (1, a[0], a[1], w[1])
    }
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out (+)= op(A) · B` for interleaved complex matrices, `op(A)` being `A`
/// (`[m, k]`) or `Aᴴ` (`A` stored `[k, m]`) when `conj_transpose_a`.
#[allow(clippy::too_many_arguments)]
fn complex_matmul_kernel(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    conj_transpose_a: bool,
    accumulate_out: bool,
) {
    if !accumulate_out {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    for i in 0..m {
        for p in 0..k {
            let (ar, ai) = if conj_transpose_a {
                (a[2 * (p * m + i)], -a[2 * (p * m + i) + 1])
            } else {
                (a[2 * (i * k + p)], a[2 * (i * k + p) + 1])
            };
            if ar == 0.0 && ai == 0.0 {
                continue;
            }
            let brow = &b[2 * p * n..2 * (p + 1) * n];
            let orow = &mut out[2 * i * n..2 * (i + 1) * n];
            for (o, bv) in orow.chunks_mut(2).zip(brow.chunks(2)) {
                o[0] += ar * bv[0] - ai * bv[1];
                o[1] += ar * bv[1] + ai * bv[0];
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], complex: bool, rng: &mut ChaCha8Rng) -> Tensor {
        let n = numel(shape) * elem_size(complex);
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_raw(shape.to_vec(), data, complex)
    }

    /// Checks the tape gradient of `sum(w ⊙ f(inputs))` (real outputs) or
    /// `sum(w ⊙ re) + sum(w' ⊙ im)` (complex outputs) against central differences.
    fn gradcheck<F>(inputs: Vec<Tensor>, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |inputs: &[Tensor], weights: &mut Option<Vec<f64>>, rng: &mut ChaCha8Rng| -> (Tape, Vec<Var>, Var) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars).unwrap();
            let ov = tape.value(out).clone();
            let w = weights.get_or_insert_with(|| (0..ov.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let flat = if ov.is_complex() {
                let shape = ov.shape().to_vec();
                let wt = Tensor::from_raw(shape, w.clone(), true);
                let wv = tape.leaf(wt);
                let prod = tape.mul(out, wv).unwrap();
                // Re(out * w) mixes both channels; add the imaginary part too
                let re = tape.real_part(prod).unwrap();
                let s1 = tape.sum(re).unwrap();
                let wi = Tensor::from_raw(ov.shape().to_vec(), w.iter().map(|v| v * 0.5).collect(), true);
                let wiv = tape.leaf(wi);
                let j = Tensor::from_raw(vec![1; ov.rank()], vec![0.0, 1.0], true);
                let jv = tape.leaf(j);
                let rot = tape.mul(out, jv).unwrap();
                let prod2 = tape.mul(rot, wiv).unwrap();
                let re2 = tape.real_part(prod2).unwrap();
                let s2 = tape.sum(re2).unwrap();
                tape.add(s1, s2).unwrap()
            } else {
                let wv = tape.leaf(Tensor::from_raw(ov.shape().to_vec(), w.clone(), false));
                let prod = tape.mul(out, wv).unwrap();
                tape.sum(prod).unwrap()
            };
            (tape, vars, flat)
        };
        let mut weights = None;
        let (tape, vars, loss) = eval(&inputs, &mut weights, &mut rng);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for (ii, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[ii], input);
            for k in 0..input.data().len() {
                let mut plus = inputs.clone();
                plus[ii].data_mut()[k] += h;
                let mut minus = inputs.clone();
                minus[ii].data_mut()[k] -= h;
                let (tp, _, lp) = eval(&plus, &mut weights, &mut rng);
                let (tm, _, lm) = eval(&minus, &mut weights, &mut rng);
                let fd = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
                let a = analytic.data()[k];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                assert!(err < 1e-5, "input {ii} coord {k}: analytic {a} fd {fd}");
            }
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn detached_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let p = tape.leaf(Tensor::vector(vec![5.0]));
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(p).is_none());
        assert_eq!(g.get_or_zeros(p, tape.value(p)).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::Contract { .. })));
    }

    #[test]
    fn shape_errors_name_operation() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        match tape.matmul(a, b) {
            Err(TensorError::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_output_is_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1e300]));
        assert!(matches!(tape.mul(a, a), Err(TensorError::NonFinite { op: "mul" })));
    }

    #[test]
    fn dft_roundtrip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[16], false, &mut rng);
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let f = tape.dft_1d(v, 0).unwrap();
        let back = tape.idft_1d(f, 0).unwrap();
        let re = tape.real_part(back).unwrap();
        assert!(tape.value(re).max_abs_diff(&x) < 1e-10);
        let ex = x.norm_sq();
        let ef = tape.value(f).norm_sq() / 16.0;
        assert!((ex - ef).abs() / ex < 1e-10);
    }

    #[test]
    fn softmax_uniform_for_equal_scores() {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::full(vec![7], 3.5));
        let s = tape.softmax(v).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn complex_matmul_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[3, 4], true, &mut rng);
        let mut eye = Tensor::complex_zeros(vec![4, 4]);
        for i in 0..4 {
            eye.data_mut()[2 * (i * 4 + i)] = 1.0;
        }
        let mut tape = Tape::new();
        let av = tape.leaf(a.clone());
        let ev = tape.leaf(eye);
        let out = tape.complex_matmul(av, ev).unwrap();
        assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.leaf(random(&[4, 4], false, &mut rng));
        let f = tape.dft_1d(x, 1).unwrap();
        let r = tape.real_part(f).unwrap();
        let g = tape.gelu(r).unwrap();
        let loss = tape.sum(g).unwrap();
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1.get(x).unwrap().data(), g2.get(x).unwrap().data());
    }

    #[test]
    fn gradcheck_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&[3, 4], false, &mut rng);
        let b = random(&[3, 4], false, &mut rng);
        let row = random(&[1, 4], false, &mut rng);
        gradcheck(vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
        gradcheck(vec![a.clone(), row.clone()], |t, v| t.add(v[0], v[1]));
        gradcheck(vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
        gradcheck(vec![a.clone(), row.clone()], |t, v| t.mul(v[0], v[1]));
        gradcheck(vec![a.clone()], |t, v| t.scale(v[0], -2.5));
        for act in [Activation::Silu, Activation::Sigmoid, Activation::Gelu, Activation::Relu] {
            gradcheck(vec![a.clone()], |t, v| t.activation(v[0], act));
        }
    }

    #[test]
    fn gradcheck_complex_mul() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&[2, 3], true, &mut rng);
        let b = random(&[2, 3], true, &mut rng);
        let gate = random(&[2, 1], false, &mut rng);
        gradcheck(vec![a.clone(), b], |t, v| t.mul(v[0], v[1]));
        gradcheck(vec![a, gate], |t, v| t.mul(v[0], v[1]));
    }

    #[test]
    fn gradcheck_matmuls() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&[3, 4], false, &mut rng);
        let b = random(&[4, 2], false, &mut rng);
        gradcheck(vec![a, b], |t, v| t.matmul(v[0], v[1]));
        let ca = random(&[2, 3, 4], true, &mut rng);
        let cw = random(&[2, 4, 3], true, &mut rng);
        gradcheck(vec![ca, cw], |t, v| t.complex_matmul(v[0], v[1]));
    }

    #[test]
    fn gradcheck_spectral_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[3, 8, 2], false, &mut rng);
        gradcheck(vec![x.clone()], |t, v| t.dft_1d(v[0], 1));
        gradcheck(vec![x.clone()], |t, v| t.dft_1d(v[0], 0));
        let c = random(&[4, 6], true, &mut rng);
        gradcheck(vec![c.clone()], |t, v| t.idft_1d(v[0], 1));
        gradcheck(vec![c.clone()], |t, v| t.dft_1d(v[0], 0));
        gradcheck(vec![c.clone()], |t, v| t.real_part(v[0]));
        let modes = random(&[2, 3, 2], true, &mut rng);
        gradcheck(vec![modes.clone()], |t, v| t.hermitian_pad(v[0], 1, 8));
        gradcheck(vec![modes.clone()], |t, v| t.hermitian_pad(v[0], 1, 4));
        gradcheck(vec![modes], |t, v| t.hermitian_pad(v[0], 1, 5));
    }

    #[test]
    fn gradcheck_reductions_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random(&[2, 3, 4], false, &mut rng);
        let b = random(&[2, 2, 4], false, &mut rng);
        gradcheck(vec![a.clone()], |t, v| t.softmax(v[0]));
        gradcheck(vec![a.clone()], |t, v| t.mean_pool(v[0]));
        gradcheck(vec![a.clone()], |t, v| t.sum(v[0]));
        gradcheck(vec![a.clone(), b], |t, v| t.concat(&[v[0], v[1]], 1));
        gradcheck(vec![a.clone()], |t, v| t.slice(v[0], 2, 1, 2));
        gradcheck(vec![a.clone()], |t, v| t.transpose(v[0], &[2, 0, 1]));
        gradcheck(vec![a.clone()], |t, v| t.reshape(v[0], &[6, 4]));
        let row = random(&[1, 1, 4], false, &mut rng);
        gradcheck(vec![row], |t, v| t.broadcast_to(v[0], &[2, 3, 4]));
        let ca = random(&[2, 3], true, &mut rng);
        gradcheck(vec![ca], |t, v| t.transpose(v[0], &[1, 0]));
    }

    #[test]
    fn gradcheck_resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random(&[4, 4, 2], false, &mut rng);
        gradcheck(vec![f.clone()], |t, v| t.avg_pool(v[0], 2, 2));
        let c = random(&[2, 3, 2], false, &mut rng);
        gradcheck(vec![c.clone()], |t, v| t.upsample(v[0], 2, 2));
        gradcheck(vec![c], |t, v| t.upsample(v[0], 2, 1));
    }

    #[test]
    fn gradcheck_kan_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let knots: Arc<[KnotVector]> = (0..3)
            .map(|_| KnotVector::uniform(-1.0, 1.0, 4, 3).unwrap())
            .collect::<Vec<_>>()
            .into();
        let x = Tensor::vector(vec![-0.43, 0.11, 0.72]);
        let coef = random(&[2, 3, 7], false, &mut rng);
        let wb = random(&[2, 3], false, &mut rng);
        let ws = random(&[2, 3], false, &mut rng);
        gradcheck(vec![x, coef, wb, ws], move |t, v| t.kan_layer(v[0], v[1], v[2], v[3], knots.clone()));
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::full(vec![3, 2, 1], 2.0));
        let u = tape.upsample(c, 2, 2).unwrap();
        assert_eq!(tape.value(u).shape(), &[6, 4, 1]);
        assert!(tape.value(u).data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn gelu_lipschitz_constant_bounds_derivative() {
        let sup = (0..200_000)
            .map(|i| -10.0 + 20.0 * i as f64 / 200_000.0)
            .map(|x| gelu_prime(x).abs())
            .fold(0.0, f64::max);
        assert!(sup <= GELU_LIPSCHITZ && sup > 1.1, "{sup}");
    }
}
