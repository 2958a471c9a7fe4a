//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every forward op evaluates eagerly, pushes its output onto the tape and
//! records enough to replay the chain rule. [`Tape::backward`] walks the
//! nodes once, newest first. Nodes that do not depend on a gradient-requiring
//! leaf are never differentiated.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{self, ConvGeometry};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Pow(Var, Var),
    Clamp(Var, T, T),
    Sigmoid(Var),
    Logit(Var),
    LRelu(Var, T),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Mean(Var),
    Sum(Var),
    SumSq(Var),
    Concat(Vec<Var>),
    AvgPool2(Var),
    Upsample2(Var),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geometry: ConvGeometry },
    LayerNorm { input: Var, scale: Var, shift: Var, stats: Vec<(T, T)> },
    DiffX(Var),
    DiffY(Var),
    ColorAngle(Var, Var),
    Crop { input: Var, top: usize, left: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by tape position.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. `v`; zeros when `v` did not participate.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads.get_mut(v.0).and_then(|g| g.take()) {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[v.0]),
        }
    }

    /// True when no leaf received a gradient (detached graph).
    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }
}

/// Epsilon inside layer normalization's square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Vector norms in the colour angle are floored at this value.
pub const COLOR_NORM_FLOOR: f64 = 1e-6;
/// Lower bound on `1 - cos^2` when differentiating `acos`.
const ACOS_GRAD_FLOOR: f64 = 1e-8;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf holding a trainable value.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            bail!(Dimension, "{what}: {sa} vs {sb}");
        }
        Ok(sa)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let value = self.value(a).zip_map(self.value(b), f)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    /// Elementwise `base^exponent`; `base` must be positive.
    pub fn pow_elementwise(&mut self, base: Var, exponent: Var) -> Result<Var> {
        self.binary(base, exponent, "pow", |b, e| b.powf(e), Op::Pow(base, exponent))
    }

    /// Elementwise clamp; the gradient passes inside `[lo, hi]` and is zero
    /// outside.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Inverse sigmoid `ln(x / (1 - x))` for `x` in `(0, 1)`.
    pub fn logit(&mut self, a: Var) -> Var {
        self.unary(a, |x| (x / (T::one() - x)).ln(), Op::Logit(a))
    }

    pub fn lrelu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { x * slope }, Op::LRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.lrelu(a, T::zero())
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    /// Mean over every element, as a scalar node.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).mean();
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::Mean(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::Sum(a), ng)
    }

    /// Sum of squared elements, as a scalar node.
    pub fn sum_sq_norm(&mut self, a: Var) -> Var {
        let v = self.value(a).sq_norm();
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::SumSq(a), ng)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            bail!(Contract, "concat of zero tensors");
        };
        let base = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if !s.same_spatial(&base) {
                bail!(Dimension, "concat_channels: {s} vs {base}");
            }
            channels += s.c;
        }
        let out_shape = base.with_channels(channels);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..base.n {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape().item_len();
                data.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), ng))
    }

    /// 2x2 average pooling, stride 2; a trailing odd row or column is dropped.
    pub fn avgpool2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.h < 2 || s.w < 2 {
            bail!(Geometry, "avgpool2 on {s}");
        }
        let value = avgpool2(self.value(a));
        let ng = self.ng(a);
        Ok(self.push(value, Op::AvgPool2(a), ng))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn resize_nearest2x(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.shape();
        let out = Tensor::from_fn(Shape { h: 2 * s.h, w: 2 * s.w, ..s }, |n, c, y, xx| x.at(n, c, y / 2, xx / 2));
        let ng = self.ng(a);
        self.push(out, Op::Upsample2(a), ng)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (geometry, out) = conv::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let ng = self.ng(input) || self.ng(weight) || bias.is_some_and(|b| self.ng(b));
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geometry }, ng))
    }

    /// Normalizes each batch item over `(C, H, W)`, then applies a
    /// per-channel affine `scale * x + shift`.
    pub fn layer_norm(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let s = self.shape(input);
        for (p, what) in [(scale, "scale"), (shift, "shift")] {
            if self.value(p).numel() != s.c {
                bail!(Dimension, "layer_norm {what} has {} entries for {} channels", self.value(p).numel(), s.c);
            }
        }
        let x = self.value(input);
        let (gamma, beta) = (self.value(scale).data(), self.value(shift).data());
        let item = s.item_len();
        let plane = s.plane_len();
        let inv = T::from_f64(1.0 / item as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let mut out = Vec::with_capacity(s.numel());
        let mut stats = Vec::with_capacity(s.n);
        for chunk in x.data().chunks_exact(item) {
            let mean = chunk.iter().copied().sum::<T>() * inv;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv;
            let rstd = T::one() / (var + eps).sqrt();
            for (i, &v) in chunk.iter().enumerate() {
                let c = i / plane;
                out.push((v - mean) * rstd * gamma[c] + beta[c]);
            }
            stats.push((mean, rstd));
        }
        let value = Tensor::new(s, out)?;
        let ng = self.ng(input) || self.ng(scale) || self.ng(shift);
        Ok(self.push(value, Op::LayerNorm { input, scale, shift, stats }, ng))
    }

    /// Forward difference along width, zero in the last column.
    pub fn diff_x(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.shape();
        let out = Tensor::from_fn(s, |n, c, y, xx| {
            if xx + 1 < s.w {
                x.at(n, c, y, xx + 1) - x.at(n, c, y, xx)
            } else {
                T::zero()
            }
        });
        let ng = self.ng(a);
        self.push(out, Op::DiffX(a), ng)
    }

    /// Forward difference along height, zero in the last row.
    pub fn diff_y(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.shape();
        let out = Tensor::from_fn(s, |n, c, y, xx| {
            if y + 1 < s.h {
                x.at(n, c, y + 1, xx) - x.at(n, c, y, xx)
            } else {
                T::zero()
            }
        });
        let ng = self.ng(a);
        self.push(out, Op::DiffY(a), ng)
    }

    /// Per-pixel angle in degrees between the channel vectors of `a` and `b`,
    /// shape `(N, 1, H, W)`.
    pub fn color_angle(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "color_angle")?;
        let (xa, xb) = (self.value(a), self.value(b));
        let deg = T::from_f64(180.0) / T::PI();
        let out = Tensor::from_fn(s.with_channels(1), |n, _, y, x| {
            let px = ColorPixel::new(xa, xb, n, y, x);
            px.cos().max(-T::one()).min(T::one()).acos() * deg
        });
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::ColorAngle(a, b), ng))
    }

    pub fn crop(&mut self, a: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let out = self.value(a).crop(top, left, h, w)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Crop { input: a, top, left }, ng))
    }

    /// Reverse pass from a scalar `loss`. Only leaf gradients are kept.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            bail!(Contract, "backward needs a scalar loss, got {ls}");
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        if !self.ng(loss) {
            log::warn!("backward on a loss with no gradient-requiring inputs; all gradients are zero");
            return Ok(Gradients { grads, shapes });
        }
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl Fn(usize, T) -> T, g: &Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (i, (a, &b)) in acc.data_mut().iter_mut().zip(g.data()).enumerate() {
                    *a += f(i, b);
                }
            }
            slot @ None => {
                let data = g.data().iter().enumerate().map(|(i, &b)| f(i, b)).collect();
                *slot = Some(Tensor::new(g.shape(), data).expect("same extents"));
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *b, |_, v| -v, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |k, v| v * vb[k], g);
                self.accumulate_with(grads, *b, |k, v| v * va[k], g);
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, |k, v| v / vb[k], g);
                self.accumulate_with(grads, *b, |k, v| -v * va[k] / (vb[k] * vb[k]), g);
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulScalar(a, s) => self.accumulate_with(grads, *a, |_, v| v * *s, g),
            Op::Pow(b, e) => {
                let (vb, ve) = (self.value(*b).data(), self.value(*e).data());
                self.accumulate_with(grads, *b, |k, v| v * ve[k] * vb[k].powf(ve[k] - T::one()), g);
                self.accumulate_with(grads, *e, |k, v| v * y[k] * vb[k].ln(), g);
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a).data();
                self.accumulate_with(grads, *a, |k, v| if va[k] >= *lo && va[k] <= *hi { v } else { T::zero() }, g);
            }
            Op::Sigmoid(a) => self.accumulate_with(grads, *a, |k, v| v * y[k] * (T::one() - y[k]), g),
            Op::Logit(a) => {
                let va = self.value(*a).data();
                self.accumulate_with(grads, *a, |k, v| v / (va[k] * (T::one() - va[k])), g);
            }
            Op::LRelu(a, slope) => {
                let va = self.value(*a).data();
                self.accumulate_with(grads, *a, |k, v| if va[k] > T::zero() { v } else { v * *slope }, g);
            }
            Op::Abs(a) => {
                let va = self.value(*a).data();
                self.accumulate_with(grads, *a, |k, v| v * sign(va[k]), g);
            }
            Op::Square(a) => {
                let va = self.value(*a).data();
                let two = T::from_f64(2.0);
                self.accumulate_with(grads, *a, |k, v| two * v * va[k], g);
            }
            Op::Sqrt(a) => {
                let half = T::from_f64(0.5);
                self.accumulate_with(grads, *a, |k, v| half * v / y[k], g);
            }
            Op::Mean(a) => {
                let s = self.shape(*a);
                let gv = g.data()[0] / T::from_f64(s.numel() as f64);
                self.accumulate(grads, *a, Tensor::full(s, gv));
            }
            Op::Sum(a) => {
                let s = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(s, g.data()[0]));
            }
            Op::SumSq(a) => {
                let va = self.value(*a);
                let s = T::from_f64(2.0) * g.data()[0];
                self.accumulate(grads, *a, va.map(|v| v * s));
            }
            Op::Concat(parts) => {
                let out_item = g.shape().item_len();
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    let len = ps.item_len();
                    if self.ng(p) {
                        let mut data = Vec::with_capacity(ps.numel());
                        for n in 0..ps.n {
                            let start = n * out_item + offset;
                            data.extend_from_slice(&g.data()[start..start + len]);
                        }
                        self.accumulate(grads, p, Tensor::new(ps, data)?);
                    }
                    offset += len;
                }
            }
            Op::AvgPool2(a) => {
                if self.ng(*a) {
                    let s = self.shape(*a);
                    let quarter = T::from_f64(0.25);
                    let gs = g.shape();
                    let dx = Tensor::from_fn(s, |n, c, yy, x| {
                        let (oy, ox) = (yy / 2, x / 2);
                        if oy < gs.h && ox < gs.w {
                            g.at(n, c, oy, ox) * quarter
                        } else {
                            T::zero()
                        }
                    });
                    self.accumulate(grads, *a, dx);
                }
            }
            Op::Upsample2(a) => {
                if self.ng(*a) {
                    let s = self.shape(*a);
                    let dx = Tensor::from_fn(s, |n, c, yy, x| {
                        g.at(n, c, 2 * yy, 2 * x)
                            + g.at(n, c, 2 * yy, 2 * x + 1)
                            + g.at(n, c, 2 * yy + 1, 2 * x)
                            + g.at(n, c, 2 * yy + 1, 2 * x + 1)
                    });
                    self.accumulate(grads, *a, dx);
                }
            }
            Op::Conv2d { input, weight, bias, geometry } => {
                let cg = conv::conv2d_backward(
                    geometry,
                    self.value(*input),
                    self.value(*weight),
                    g,
                    self.ng(*input),
                    self.ng(*weight),
                    bias.is_some_and(|b| self.ng(b)),
                );
                if let Some(dx) = cg.input {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dw) = cg.weight {
                    self.accumulate(grads, *weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, cg.bias) {
                    let bs = self.shape(*b);
                    self.accumulate(grads, *b, db.reshape(bs)?);
                }
            }
            Op::LayerNorm { input, scale, shift, stats } => {
                self.layer_norm_backward(*input, *scale, *shift, stats, g, grads)?;
            }
            Op::DiffX(a) => {
                if self.ng(*a) {
                    let s = self.shape(*a);
                    let dx = Tensor::from_fn(s, |n, c, yy, x| {
                        let mut v = T::zero();
                        if x + 1 < s.w {
                            v -= g.at(n, c, yy, x);
                        }
                        if x > 0 {
                            v += g.at(n, c, yy, x - 1);
                        }
                        v
                    });
                    self.accumulate(grads, *a, dx);
                }
            }
            Op::DiffY(a) => {
                if self.ng(*a) {
                    let s = self.shape(*a);
                    let dx = Tensor::from_fn(s, |n, c, yy, x| {
                        let mut v = T::zero();
                        if yy + 1 < s.h {
                            v -= g.at(n, c, yy, x);
                        }
                        if yy > 0 {
                            v += g.at(n, c, yy - 1, x);
                        }
                        v
                    });
                    self.accumulate(grads, *a, dx);
                }
            }
            Op::ColorAngle(a, b) => self.color_angle_backward(*a, *b, g, grads)?,
            Op::Crop { input, top, left } => {
                if self.ng(*input) {
                    let s = self.shape(*input);
                    let gs = g.shape();
                    let mut dx = Tensor::zeros(s);
                    for n in 0..gs.n {
                        for c in 0..gs.c {
                            for yy in 0..gs.h {
                                for x in 0..gs.w {
                                    dx.set(n, c, yy + top, x + left, g.at(n, c, yy, x));
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *input, dx);
                }
            }
        }
        Ok(())
    }

    fn layer_norm_backward(
        &self,
        input: Var,
        scale: Var,
        shift: Var,
        stats: &[(T, T)],
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let x = self.value(input);
        let s = x.shape();
        let gamma = self.value(scale).data();
        let item = s.item_len();
        let plane = s.plane_len();
        let inv = T::from_f64(1.0 / item as f64);
        let mut dgamma = vec![T::zero(); s.c];
        let mut dbeta = vec![T::zero(); s.c];
        let mut dx = if self.ng(input) { vec![T::zero(); s.numel()] } else { Vec::new() };
        for (n, &(mean, rstd)) in stats.iter().enumerate() {
            let xs = &x.data()[n * item..(n + 1) * item];
            let gs = &g.data()[n * item..(n + 1) * item];
            let mut sum_gh = T::zero();
            let mut sum_gh_xhat = T::zero();
            for k in 0..item {
                let c = k / plane;
                let xhat = (xs[k] - mean) * rstd;
                dgamma[c] += gs[k] * xhat;
                dbeta[c] += gs[k];
                let gh = gs[k] * gamma[c];
                sum_gh += gh;
                sum_gh_xhat += gh * xhat;
            }
            if !dx.is_empty() {
                let (m1, m2) = (sum_gh * inv, sum_gh_xhat * inv);
                for k in 0..item {
                    let c = k / plane;
                    let xhat = (xs[k] - mean) * rstd;
                    dx[n * item + k] = rstd * (gs[k] * gamma[c] - m1 - xhat * m2);
                }
            }
        }
        if !dx.is_empty() {
            self.accumulate(grads, input, Tensor::new(s, dx)?);
        }
        let ps = self.shape(scale);
        self.accumulate(grads, scale, Tensor::new(ps, dgamma)?);
        let ps = self.shape(shift);
        self.accumulate(grads, shift, Tensor::new(ps, dbeta)?);
        Ok(())
    }

    fn color_angle_backward(&self, a: Var, b: Var, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let (xa, xb) = (self.value(a), self.value(b));
        let s = xa.shape();
        let deg = T::from_f64(180.0) / T::PI();
        let floor = T::from_f64(ACOS_GRAD_FLOOR);
        let mut da = Tensor::zeros(s);
        let mut db = Tensor::zeros(s);
        for n in 0..s.n {
            for y in 0..s.h {
                for x in 0..s.w {
                    let px = ColorPixel::new(xa, xb, n, y, x);
                    let cos = px.cos();
                    if cos <= -T::one() || cos >= T::one() {
                        continue;
                    }
                    let dtheta = -g.at(n, 0, y, x) * deg / (T::one() - cos * cos).max(floor).sqrt();
                    let inv = T::one() / (px.na * px.nb);
                    for c in 0..s.c {
                        let (va, vb) = (xa.at(n, c, y, x), xb.at(n, c, y, x));
                        let mut dca = vb * inv;
                        if px.raw_na > px.floor {
                            dca -= cos * va / (px.raw_na * px.raw_na);
                        }
                        let mut dcb = va * inv;
                        if px.raw_nb > px.floor {
                            dcb -= cos * vb / (px.raw_nb * px.raw_nb);
                        }
                        da.set(n, c, y, x, dtheta * dca);
                        db.set(n, c, y, x, dtheta * dcb);
                    }
                }
            }
        }
        self.accumulate(grads, a, da);
        self.accumulate(grads, b, db);
        Ok(())
    }
}

struct ColorPixel<T> {
    dot: T,
    raw_na: T,
    raw_nb: T,
    na: T,
    nb: T,
    floor: T,
    /// Bitwise-equal vectors, whose angle is exactly zero.
    same: bool,
}

impl<T: Scalar> ColorPixel<T> {
    fn new(a: &Tensor<T>, b: &Tensor<T>, n: usize, y: usize, x: usize) -> Self {
        let (mut dot, mut sa, mut sb) = (T::zero(), T::zero(), T::zero());
        let mut same = true;
        for c in 0..a.shape().c {
            let (va, vb) = (a.at(n, c, y, x), b.at(n, c, y, x));
            same &= va == vb;
            dot += va * vb;
            sa += va * va;
            sb += vb * vb;
        }
        let floor = T::from_f64(COLOR_NORM_FLOOR);
        let (raw_na, raw_nb) = (sa.sqrt(), sb.sqrt());
        ColorPixel { dot, raw_na, raw_nb, na: raw_na.max(floor), nb: raw_nb.max(floor), floor, same }
    }

    fn cos(&self) -> T {
        if self.same {
            return T::one();
        }
        self.dot / (self.na * self.nb)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn avgpool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let quarter = T::from_f64(0.25);
    Tensor::from_fn(Shape { h: s.h / 2, w: s.w / 2, ..s }, |n, c, y, xx| {
        (x.at(n, c, 2 * y, 2 * xx)
            + x.at(n, c, 2 * y, 2 * xx + 1)
            + x.at(n, c, 2 * y + 1, 2 * xx)
            + x.at(n, c, 2 * y + 1, 2 * xx + 1))
            * quarter
    })
}

/// Runs `f` on a fresh tape holding `inputs` as constants and returns the
/// resulting value. Convenient for evaluating taped functions without
/// gradients.
pub fn eval_with<T: Scalar>(
    inputs: &[&Tensor<T>],
    f: impl FnOnce(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
    let out = f(&mut tape, &vars)?;
    let idx = out.0;
    let node = tape.nodes.swap_remove(idx);
    Ok(node.value)
}
