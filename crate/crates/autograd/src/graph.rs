//! Define-by-run tape. Every op records its inputs; `backward` walks the tape in reverse.

use std::collections::HashMap;
use std::sync::Arc;

use crate::conv;
use crate::error::{Result, TensorError};
use crate::pool;
use crate::real::Real;
use crate::tensor::{broadcast_zip, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { x: Var, scale: T },
    Square(Var),
    Exp(Var),
    Sqrt(Var),
    Abs(Var),
    Sigmoid(Var),
    LeakyRelu { x: Var, slope: T },
    Clamp { x: Var, lo: T, hi: T },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample(Var),
    Concat(Vec<Var>),
    Mean { x: Var, count: usize },
    ChannelMax { x: Var, argmax: Vec<u32> },
    RegionMean { x: Var, window: usize },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of tensor operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<String, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Named leaf, created once per graph. Later binds of the same name return the same node
    /// so gradients from every use accumulate in one place.
    pub fn bind(&mut self, name: &str, value: &Arc<Tensor<T>>, requires_grad: bool) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = self.leaf_shared(Arc::clone(value), requires_grad);
        self.bound.insert(name.to_owned(), v);
        v
    }

    pub fn bound(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copy of the value with no history.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = Arc::clone(&self.nodes[v.0].value);
        self.leaf_shared(value, false)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        broadcast_zip(self.value(a), self.value(b), name, f)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        self.value(x).map(f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(out, Op::Div(a, b), &[a, b]))
    }

    /// `x * scale + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        let out = self.unary(x, |v| v * s + t);
        self.push(out, Op::Affine { x, scale: s }, &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v.exp());
        self.push(out, Op::Exp(x), &[x])
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v.sqrt());
        self.push(out, Op::Sqrt(x), &[x])
    }

    /// Absolute value with subgradient 0 at the origin.
    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v.abs());
        self.push(out, Op::Abs(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        let out = self.unary(x, |v| if v > T::zero() { v } else { v * s });
        self.push(out, Op::LeakyRelu { x, slope: s }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        let out = self.unary(x, |v| v.max(l).min(h));
        self.push(out, Op::Clamp { x, lo: l, hi: h }, &[x])
    }

    /// 2-D cross-correlation with symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, &inputs))
    }

    /// 2×2 max pool, stride 2, ceil mode.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (out, argmax) = pool::max_pool2(self.value(x));
        self.push(out, Op::MaxPool2 { x, argmax }, &[x])
    }

    /// Nearest-neighbour resize to `h×w`.
    pub fn upsample_nearest(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        if h == 0 || w == 0 {
            return Err(TensorError::Invalid("upsample to empty extent".into()));
        }
        let out = pool::upsample_nearest(self.value(x), h, w);
        Ok(self.push(out, Op::Upsample(x), &[x]))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let [b, _, h, w] = self.shape(first).dims();
        let mut total_c = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.batch() != b || s.height() != h || s.width() != w {
                return Err(TensorError::Mismatch {
                    op: "concat_channels",
                    lhs: self.shape(first),
                    rhs: s,
                });
            }
            total_c += s.channels();
        }
        let mut data = Vec::with_capacity(b * total_c * h * w);
        for ib in 0..b {
            for &p in parts {
                let v = self.value(p);
                let n = v.shape().channels() * h * w;
                data.extend_from_slice(&v.data()[ib * n..(ib + 1) * n]);
            }
        }
        let out = Tensor::from_vec(Shape::new(b, total_c, h, w), data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Mean over the axes flagged in `axes`, keeping them as singletons.
    pub fn mean_axes(&mut self, x: Var, axes: [bool; 4]) -> Var {
        let in_shape = self.shape(x);
        let mut dims = in_shape.dims();
        for i in 0..4 {
            if axes[i] {
                dims[i] = 1;
            }
        }
        let out_shape = Shape(dims);
        let count = in_shape.numel() / out_shape.numel().max(1);
        let inv = T::one() / T::from_usize(count).unwrap();
        let out = self.value(x).reduce_to(out_shape).map(|v| v * inv);
        self.push(out, Op::Mean { x, count }, &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        self.mean_axes(x, [true; 4])
    }

    /// Per-(batch, channel) mean over height and width.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        self.mean_axes(x, [false, false, true, true])
    }

    pub fn mean_channels(&mut self, x: Var) -> Var {
        self.mean_axes(x, [false, true, false, false])
    }

    pub fn max_channels(&mut self, x: Var) -> Var {
        let (out, argmax) = pool::channel_max(self.value(x));
        self.push(out, Op::ChannelMax { x, argmax }, &[x])
    }

    /// Mean over non-overlapping `window×window` tiles (partial edge tiles use their own size).
    pub fn region_mean(&mut self, x: Var, window: usize) -> Result<Var> {
        if window == 0 {
            return Err(TensorError::Invalid("region_mean window must be ≥ 1".into()));
        }
        let out = pool::region_mean(self.value(x), window);
        Ok(self.push(out, Op::RegionMean { x, window }, &[x]))
    }

    /// Sum of several same-shape (or broadcastable) terms.
    pub fn sum_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut it = terms.iter().copied();
        let mut acc = it
            .next()
            .ok_or_else(|| TensorError::Invalid("sum of zero terms".into()))?;
        for t in it {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse-mode gradients of a single-element `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            names: self.bound.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let out = &*node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.reduce_to(self.shape(a)));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.reduce_to(self.shape(b)));
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.reduce_to(self.shape(a)));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.reduce_to(self.shape(b)).map(|v| -v));
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let ga = broadcast_zip(g, self.value(b), "mul", |x, y| x * y)?;
                    self.accumulate(grads, a, ga.reduce_to(self.shape(a)));
                }
                if self.wants(b) {
                    let gb = broadcast_zip(g, self.value(a), "mul", |x, y| x * y)?;
                    self.accumulate(grads, b, gb.reduce_to(self.shape(b)));
                }
            }
            &Op::Div(a, b) => {
                if self.wants(a) {
                    let ga = broadcast_zip(g, self.value(b), "div", |x, y| x / y)?;
                    self.accumulate(grads, a, ga.reduce_to(self.shape(a)));
                }
                if self.wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let t = broadcast_zip(g, out, "div", |x, y| x * y)?;
                    let gb = broadcast_zip(&t, self.value(b), "div", |x, y| -x / y)?;
                    self.accumulate(grads, b, gb.reduce_to(self.shape(b)));
                }
            }
            &Op::Affine { x, scale } => {
                self.accumulate(grads, x, g.map(|v| v * scale));
            }
            &Op::Square(x) => {
                let two = T::from_f64_lossy(2.0);
                let gx = broadcast_zip(g, self.value(x), "square", |gv, xv| gv * two * xv)?;
                self.accumulate(grads, x, gx);
            }
            &Op::Exp(x) => {
                let gx = broadcast_zip(g, out, "exp", |gv, y| gv * y)?;
                self.accumulate(grads, x, gx);
            }
            &Op::Sqrt(x) => {
                let half = T::from_f64_lossy(0.5);
                let gx = broadcast_zip(g, out, "sqrt", |gv, y| {
                    if y > T::zero() {
                        gv * half / y
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, x, gx);
            }
            &Op::Abs(x) => {
                let gx = broadcast_zip(g, self.value(x), "abs", |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, x, gx);
            }
            &Op::Sigmoid(x) => {
                let gx = broadcast_zip(g, out, "sigmoid", |gv, y| gv * y * (T::one() - y))?;
                self.accumulate(grads, x, gx);
            }
            &Op::LeakyRelu { x, slope } => {
                let gx = broadcast_zip(g, self.value(x), "leaky_relu", |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else {
                        gv * slope
                    }
                })?;
                self.accumulate(grads, x, gx);
            }
            &Op::Clamp { x, lo, hi } => {
                let gx = broadcast_zip(g, self.value(x), "clamp", |gv, xv| {
                    if xv >= lo && xv <= hi {
                        gv
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, x, gx);
            }
            &Op::Conv2d { x, w, b, stride, pad } => {
                let cg = conv::conv2d_backward(
                    self.value(x),
                    self.value(w),
                    b.filter(|&b| self.wants(b)).map(|b| self.shape(b)),
                    g,
                    stride,
                    pad,
                    self.wants(x),
                    self.wants(w),
                )?;
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, x, dx);
                }
                if let Some(dw) = cg.dw {
                    self.accumulate(grads, w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    self.accumulate(grads, b, db);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let d = gx.data_mut();
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    d[i as usize] += gv;
                }
                self.accumulate(grads, *x, gx);
            }
            &Op::Upsample(x) => {
                let gx = pool::upsample_nearest_backward(g, self.shape(x));
                self.accumulate(grads, x, gx);
            }
            Op::Concat(parts) => {
                let [b, _, h, w] = out.shape().dims();
                let total = out.shape().channels() * h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).channels();
                    let n = c * h * w;
                    if self.wants(p) {
                        let mut data = Vec::with_capacity(b * n);
                        for ib in 0..b {
                            let start = ib * total + offset;
                            data.extend_from_slice(&g.data()[start..start + n]);
                        }
                        self.accumulate(grads, p, Tensor::from_vec(self.shape(p), data)?);
                    }
                    offset += n;
                }
            }
            &Op::Mean { x, count } => {
                let inv = T::one() / T::from_usize(count).unwrap();
                let gx = g.broadcast_to(self.shape(x))?.map(|v| v * inv);
                self.accumulate(grads, x, gx);
            }
            Op::ChannelMax { x, argmax } => {
                let shape = self.shape(*x);
                let [_, c, h, w] = shape.dims();
                let plane = h * w;
                let mut gx = Tensor::zeros(shape);
                let d = gx.data_mut();
                for (i, (&ch, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                    let (ib, p) = (i / plane, i % plane);
                    d[(ib * c + ch as usize) * plane + p] += gv;
                }
                self.accumulate(grads, *x, gx);
            }
            &Op::RegionMean { x, window } => {
                let gx = pool::region_mean_backward(g, self.shape(x), window);
                self.accumulate(grads, x, gx);
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    names: HashMap<String, Var>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf created with [`Graph::bind`].
    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.get(name).and_then(|&v| self.get(v))
    }

    pub fn take_by_name(&mut self, name: &str) -> Option<Tensor<T>> {
        let v = *self.names.get(name)?;
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
