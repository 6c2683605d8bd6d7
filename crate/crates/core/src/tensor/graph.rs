//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and returns per-node
//! gradients. Graphs are built fresh for each evaluation and dropped after.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::{Shape, Tensor};
use super::conv::{self, ConvShapes};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// `z` for `z > 0`, `slope * z` otherwise.
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::LeakyRelu(a) => {
                if z > T::zero() {
                    z
                } else {
                    T::c(a) * z
                }
            }
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
        }
    }

    /// Derivative given input `z` and output `y`; kinks take the positive branch.
    fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Activation::LeakyRelu(a) => {
                if z >= T::zero() {
                    T::one()
                } else {
                    T::c(a)
                }
            }
            Activation::Relu => {
                if z >= T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Train/eval switch for batch norm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, used for running-average updates.
    pub var_unbiased: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Log(Var),
    Act(Var, Activation),
    Crop {
        x: Var,
        c0: usize,
        h0: usize,
        w0: usize,
    },
    Concat(Var, Var),
    Mean(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Dropout(Var, Vec<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(a: Shape, b: Shape, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Constant copy of `v`, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        what: &str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(va.shape(), vb.shape(), what)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.unary(x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    pub fn add_scalar(&mut self, x: Var, shift: T) -> Var {
        self.affine(x, T::one(), shift)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), |v| v.sqrt())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        self.unary(x, Op::Act(x, kind), |v| kind.apply(v))
    }

    /// Sub-block `[c0, c0+c) x [h0, h0+h) x [w0, w0+w)` of every sample.
    pub fn crop(
        &mut self,
        x: Var,
        c0: usize,
        h0: usize,
        w0: usize,
        extent: (usize, usize, usize),
    ) -> Result<Var> {
        let s = self.shape(x);
        let (c, h, w) = extent;
        if c0 + c > s.c || h0 + h > s.h || w0 + w > s.w {
            return Err(Error::Shape(format!(
                "crop {c}x{h}x{w} at ({c0},{h0},{w0}) of {s}"
            )));
        }
        let out = Shape::new(s.n, c, h, w);
        let src = self.nodes[x.0].value.data();
        let mut data = Vec::with_capacity(out.numel());
        for n in 0..s.n {
            for ch in 0..c {
                for y in 0..h {
                    let start = ((n * s.c + c0 + ch) * s.h + h0 + y) * s.w + w0;
                    data.extend_from_slice(&src[start..start + w]);
                }
            }
        }
        let value = Tensor::from_vec(out, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Crop { x, c0, h0, w0 }, rg))
    }

    /// Channel concatenation, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::Shape(format!("concat_channels: {sa} with {sb}")));
        }
        let out = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
        let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let mut data = Vec::with_capacity(out.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&da[n * la..(n + 1) * la]);
            data.extend_from_slice(&db[n * lb..(n + 1) * lb]);
        }
        let value = Tensor::from_vec(out, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Arithmetic mean of all elements as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.is_empty() {
            return Err(Error::EmptyDomain("mean of an empty tensor".into()));
        }
        let sum: f64 = v.data().iter().map(|t| t.as_f64()).sum();
        let value = Tensor::scalar(T::c(sum / v.len() as f64));
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mean(x), rg))
    }

    fn conv_operands(&self, w: Var, b: Option<Var>) -> (&Tensor<T>, Option<&Tensor<T>>) {
        (&self.nodes[w.0].value, b.map(|b| &self.nodes[b.0].value))
    }

    /// Weight layout `[out, in, k, k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let cs = conv::conv2d_shapes(
            self.shape(x),
            self.shape(w),
            b.map(|b| self.shape(b)),
            stride,
            padding,
        )?;
        let (wt, bt) = self.conv_operands(w, b);
        let value = conv::conv2d_forward(&self.nodes[x.0].value, wt, bt, &cs);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Weight layout `[in, out, k, k]`; the adjoint of [`Graph::conv2d`].
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let cs = conv::conv_transpose2d_shapes(
            self.shape(x),
            self.shape(w),
            b.map(|b| self.shape(b)),
            stride,
            padding,
        )?;
        let (wt, bt) = self.conv_operands(w, b);
        let value = conv::conv_transpose2d_forward(&self.nodes[x.0].value, wt, bt, &cs);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    fn check_bn_operands(&self, x: Var, gamma: Var, beta: Var) -> Result<Shape> {
        let s = self.shape(x);
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p).numel() != s.c {
                return Err(Error::Shape(format!(
                    "batch norm {name} {} for {} channels",
                    self.shape(p),
                    s.c
                )));
            }
        }
        Ok(s)
    }

    /// Training-mode batch norm over `N x H x W` per channel.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        let s = self.check_bn_operands(x, gamma, beta)?;
        let m = s.n * s.plane();
        if m <= 1 {
            return Err(Error::Shape(format!(
                "batch norm over {m} value(s) per channel has degenerate statistics ({s})"
            )));
        }
        let xd = self.nodes[x.0].value.data();
        let mut mean = vec![T::zero(); s.c];
        let mut var_unbiased = vec![T::zero(); s.c];
        let mut inv_std = vec![T::zero(); s.c];
        for c in 0..s.c {
            let mut sum = 0.0;
            for n in 0..s.n {
                let off = (n * s.c + c) * s.plane();
                sum += xd[off..off + s.plane()]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>();
            }
            let mu = sum / m as f64;
            let mut sq = 0.0;
            for n in 0..s.n {
                let off = (n * s.c + c) * s.plane();
                sq += xd[off..off + s.plane()]
                    .iter()
                    .map(|v| (v.as_f64() - mu).powi(2))
                    .sum::<f64>();
            }
            mean[c] = T::c(mu);
            var_unbiased[c] = T::c(sq / (m - 1) as f64);
            inv_std[c] = T::c(1.0 / (sq / m as f64 + eps).sqrt());
        }
        let out = self.normalize_channels(x, gamma, beta, &mean, inv_std, true);
        Ok((out, BatchStats { mean, var_unbiased }))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let s = self.check_bn_operands(x, gamma, beta)?;
        if mean.len() != s.c || var.len() != s.c {
            return Err(Error::Shape(format!(
                "running statistics for {} channels",
                s.c
            )));
        }
        let inv_std = var
            .iter()
            .map(|&v| T::c(1.0 / (v.as_f64() + eps).sqrt()))
            .collect();
        Ok(self.normalize_channels(x, gamma, beta, mean, inv_std, false))
    }

    fn normalize_channels(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        batch_stats: bool,
    ) -> Var {
        let s = self.shape(x);
        let plane = s.plane();
        let xd = self.nodes[x.0].value.data();
        let g = self.nodes[gamma.0].value.data();
        let b = self.nodes[beta.0].value.data();
        let mut xhat = vec![T::zero(); s.numel()];
        let mut out = vec![T::zero(); s.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                for i in off..off + plane {
                    let xh = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = xh;
                    out[i] = g[c] * xh + b[c];
                }
            }
        }
        let value = Tensor::from_vec(s, out).expect("batch norm shape");
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        )
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::c(1.0 / (1.0 - rate));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let xd = self.nodes[x.0].value.data();
        let data = xd.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(self.shape(x), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout(x, mask), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &gy, &mut grads)?;
            }
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &dyn Fn(usize) -> T| {
            if !self.rg(v) {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            for (i, g) in slot.iter_mut().enumerate() {
                *g = *g + f(i);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|i| gy[i]);
                acc(*b, &|i| gy[i]);
            }
            Op::Sub(a, b) => {
                acc(*a, &|i| gy[i]);
                acc(*b, &|i| -gy[i]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &|i| gy[i] * vb[i]);
                acc(*b, &|i| gy[i] * va[i]);
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &|i| gy[i] / vb[i]);
                acc(*b, &|i| -gy[i] * va[i] / (vb[i] * vb[i]));
            }
            Op::Affine(x, scale) => acc(*x, &|i| gy[i] * *scale),
            Op::Square(x) => {
                let vx = val(*x).data();
                acc(*x, &|i| gy[i] * T::c(2.0) * vx[i]);
            }
            Op::Sqrt(x) => {
                let vy = node.value.data();
                acc(*x, &|i| gy[i] / (T::c(2.0) * vy[i]));
            }
            Op::Abs(x) => {
                let vx = val(*x).data();
                acc(*x, &|i| if vx[i] >= T::zero() { gy[i] } else { -gy[i] });
            }
            Op::Log(x) => {
                let vx = val(*x).data();
                acc(*x, &|i| gy[i] / vx[i]);
            }
            Op::Act(x, kind) => {
                let (vx, vy) = (val(*x).data(), node.value.data());
                acc(*x, &|i| gy[i] * kind.derivative(vx[i], vy[i]));
            }
            Op::Crop { x, c0, h0, w0 } => {
                let s = val(*x).shape();
                let o = node.value.shape();
                // scatter: map each output element to its source index
                let src_index = |i: usize| {
                    let w = i % o.w;
                    let h = (i / o.w) % o.h;
                    let c = (i / o.plane()) % o.c;
                    let n = i / (o.c * o.plane());
                    ((n * s.c + c0 + c) * s.h + h0 + h) * s.w + w0 + w
                };
                if self.rg(*x) {
                    let slot = grads[x.0].get_or_insert_with(|| vec![T::zero(); s.numel()]);
                    for (i, &g) in gy.iter().enumerate() {
                        let j = src_index(i);
                        slot[j] = slot[j] + g;
                    }
                }
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
                acc(*a, &|i| gy[(i / la) * (la + lb) + i % la]);
                acc(*b, &|i| gy[(i / lb) * (la + lb) + la + i % lb]);
            }
            Op::Mean(x) => {
                let g = gy[0] / T::c(val(*x).len() as f64);
                acc(*x, &|_| g);
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let cs = conv::conv2d_shapes(
                    val(*x).shape(),
                    val(*w).shape(),
                    b.map(|b| val(b).shape()),
                    *stride,
                    *padding,
                )?;
                let want = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let (dx, dw, db) = conv::conv2d_backward(val(*x), val(*w), gy, &cs, want);
                self.apply_conv_grads(grads, (*x, dx), (*w, dw), b.map(|b| (b, db)));
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let cs: ConvShapes = conv::conv_transpose2d_shapes(
                    val(*x).shape(),
                    val(*w).shape(),
                    b.map(|b| val(b).shape()),
                    *stride,
                    *padding,
                )?;
                let want = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let (dx, dw, db) = conv::conv_transpose2d_backward(val(*x), val(*w), gy, &cs, want);
                self.apply_conv_grads(grads, (*x, dx), (*w, dw), b.map(|b| (b, db)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = val(*x).shape();
                let plane = s.plane();
                let m = (s.n * plane) as f64;
                let g = val(*gamma).data();
                let mut sum_dy = vec![0.0f64; s.c];
                let mut sum_dy_xhat = vec![0.0f64; s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let off = (n * s.c + c) * plane;
                        for i in off..off + plane {
                            sum_dy[c] += gy[i].as_f64();
                            sum_dy_xhat[c] += (gy[i] * xhat[i]).as_f64();
                        }
                    }
                }
                acc(*gamma, &|c| T::c(sum_dy_xhat[c]));
                acc(*beta, &|c| T::c(sum_dy[c]));
                let channel = |i: usize| (i / plane) % s.c;
                if *batch_stats {
                    acc(*x, &|i| {
                        let c = channel(i);
                        let k = g[c] * inv_std[c];
                        k * (gy[i] - T::c(sum_dy[c] / m) - xhat[i] * T::c(sum_dy_xhat[c] / m))
                    });
                } else {
                    acc(*x, &|i| {
                        let c = channel(i);
                        gy[i] * g[c] * inv_std[c]
                    });
                }
            }
            Op::Dropout(x, mask) => acc(*x, &|i| gy[i] * mask[i]),
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn apply_conv_grads(
        &self,
        grads: &mut [Option<Vec<T>>],
        x: (Var, Option<Vec<T>>),
        w: (Var, Option<Vec<T>>),
        b: Option<(Var, Option<Vec<T>>)>,
    ) {
        for (v, g) in [Some(x), Some(w), b].into_iter().flatten() {
            let Some(g) = g else { continue };
            match &mut grads[v.0] {
                Some(slot) => {
                    for (s, d) in slot.iter_mut().zip(g) {
                        *s = *s + d;
                    }
                }
                empty => *empty = Some(g),
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the loss or is a constant.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
