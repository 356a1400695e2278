use std::fmt;

use crate::error::{Result, TensorError};
use crate::real::Real;

/// NCHW extents. Every tensor in the engine is rank 4; scalars are `[1, 1, 1, 1]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(b: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape([b, c, h, w])
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn channels(&self) -> usize {
        self.0[1]
    }

    pub fn height(&self) -> usize {
        self.0[2]
    }

    pub fn width(&self) -> usize {
        self.0[3]
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0
    }

    /// Row-major strides.
    pub fn strides(&self) -> [usize; 4] {
        let [_, c, h, w] = self.0;
        [c * h * w, h * w, w, 1]
    }

    /// Numpy-style broadcast where every axis must match or be 1.
    pub fn broadcast(a: Shape, b: Shape) -> Option<Shape> {
        let mut out = [0; 4];
        for i in 0..4 {
            let (x, y) = (a.0[i], b.0[i]);
            out[i] = if x == y {
                x
            } else if x == 1 {
                y
            } else if y == 1 {
                x
            } else {
                return None;
            };
        }
        Some(Shape(out))
    }

    /// Strides for reading `self` as if it had shape `target` (zero on broadcast axes).
    pub(crate) fn broadcast_strides(&self, target: Shape) -> [usize; 4] {
        let s = self.strides();
        let mut out = [0; 4];
        for i in 0..4 {
            out[i] = if self.0[i] == target.0[i] { s[i] } else { 0 };
        }
        out
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [b, c, h, w] = self.0;
        write!(f, "[{b}, {c}, {h}, {w}]")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense, contiguous NCHW buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    /// Builds a tensor by calling `f` once per element in row-major order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [b, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for ib in 0..b {
            for ic in 0..c {
                for ih in 0..h {
                    for iw in 0..w {
                        data.push(f([ib, ic, ih, iw]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, idx: [usize; 4]) -> T {
        let s = self.shape.strides();
        self.data[idx[0] * s[0] + idx[1] * s[1] + idx[2] * s[2] + idx[3]]
    }

    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let s = self.shape.strides();
        self.data[idx[0] * s[0] + idx[1] * s[1] + idx[2] * s[2] + idx[3]] = v;
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.numel()).unwrap()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += other` for identical shapes.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// One batch item as a `[1, c, h, w]` tensor.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let [b, c, h, w] = self.shape.0;
        if index >= b {
            return Err(TensorError::Invalid(format!(
                "batch index {index} out of range for {}",
                self.shape
            )));
        }
        let n = c * h * w;
        Ok(Tensor {
            shape: Shape::new(1, c, h, w),
            data: self.data[index * n..(index + 1) * n].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::Invalid("stack of zero tensors".into()))?;
        let [_, c, h, w] = first.shape.0;
        let mut total = 0;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.numel()).sum());
        for t in items {
            let [b, c2, h2, w2] = t.shape.0;
            if (c2, h2, w2) != (c, h, w) {
                return Err(TensorError::Mismatch {
                    op: "stack_batch",
                    lhs: first.shape,
                    rhs: t.shape,
                });
            }
            total += b;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(total, c, h, w),
            data,
        })
    }

    /// Materializes `self` broadcast to `target`.
    pub(crate) fn broadcast_to(&self, target: Shape) -> Result<Self> {
        if self.shape == target {
            return Ok(self.clone());
        }
        if Shape::broadcast(self.shape, target) != Some(target) {
            return Err(TensorError::Mismatch {
                op: "broadcast_to",
                lhs: self.shape,
                rhs: target,
            });
        }
        let s = self.shape.broadcast_strides(target);
        let [b, c, h, w] = target.0;
        let mut data = Vec::with_capacity(target.numel());
        for ib in 0..b {
            for ic in 0..c {
                for ih in 0..h {
                    let base = ib * s[0] + ic * s[1] + ih * s[2];
                    for iw in 0..w {
                        data.push(self.data[base + iw * s[3]]);
                    }
                }
            }
        }
        Ok(Tensor {
            shape: target,
            data,
        })
    }

    /// Sums over every axis where `shape` is 1 but `self` is not.
    pub(crate) fn reduce_to(&self, shape: Shape) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let mut out = Tensor::zeros(shape);
        let s = shape.broadcast_strides(self.shape);
        let [b, c, h, w] = self.shape.0;
        let mut src = 0;
        for ib in 0..b {
            for ic in 0..c {
                for ih in 0..h {
                    let base = ib * s[0] + ic * s[1] + ih * s[2];
                    for iw in 0..w {
                        out.data[base + iw * s[3]] += self.data[src];
                        src += 1;
                    }
                }
            }
        }
        out
    }
}

/// `f(a, b)` with broadcasting, returning the output tensor.
pub(crate) fn broadcast_zip<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor {
            shape: a.shape,
            data,
        });
    }
    let out = Shape::broadcast(a.shape, b.shape).ok_or(TensorError::Mismatch {
        op,
        lhs: a.shape,
        rhs: b.shape,
    })?;
    let sa = a.shape.broadcast_strides(out);
    let sb = b.shape.broadcast_strides(out);
    let [nb, nc, nh, nw] = out.0;
    let mut data = Vec::with_capacity(out.numel());
    for ib in 0..nb {
        for ic in 0..nc {
            for ih in 0..nh {
                let ba = ib * sa[0] + ic * sa[1] + ih * sa[2];
                let bb = ib * sb[0] + ic * sb[1] + ih * sb[2];
                for iw in 0..nw {
                    data.push(f(a.data[ba + iw * sa[3]], b.data[bb + iw * sb[3]]));
                }
            }
        }
    }
    Ok(Tensor { shape: out, data })
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor<{}>{} {:?}", T::DTYPE, self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "…")?;
        }
        Ok(())
    }
}
