#![allow(dead_code)]

use cigan_core::autograd::{Graph, Shape, Tensor, Var};
use cigan_core::Result;

/// Deterministic uniform values from a 64-bit LCG, independent of the crate's RNG.
pub fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub fn uniform(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = lcg(seed);
    Tensor::from_fn(shape, |_| lo + (hi - lo) * r())
}

/// Scalar `mean(f(x) ⊙ w)` with fixed random `w`, plus its gradient when requested.
fn project(
    input: &Tensor<f64>,
    seed: u64,
    f: &impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
    want_grad: bool,
) -> (f64, Option<Tensor<f64>>) {
    let mut g = Graph::new();
    let x = g.leaf(input.clone(), want_grad);
    let y = f(&mut g, x).unwrap();
    let w = g.constant(uniform(g.shape(y), seed, -1.0, 1.0));
    let p = g.mul(y, w).unwrap();
    let s = g.mean_all(p);
    let value = g.value(s).item();
    if !want_grad {
        return (value, None);
    }
    let grads = g.backward(s).unwrap();
    let grad = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    (value, Some(grad))
}

/// Relative error `‖fd − analytic‖ / max(‖fd‖, ‖analytic‖)` of the input gradient of `f`
/// (reduced to a scalar through fixed random weights), central differences with step `h`.
pub fn grad_rel_error(
    input: &Tensor<f64>,
    h: f64,
    seed: u64,
    f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
) -> f64 {
    let analytic = project(input, seed, &f, true).1.unwrap();
    let (mut num, mut den_fd, mut den_an) = (0.0, 0.0, 0.0);
    for i in 0..input.numel() {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let fd = (project(&plus, seed, &f, false).0 - project(&minus, seed, &f, false).0) / (2.0 * h);
        let an = analytic.data()[i];
        num += (fd - an) * (fd - an);
        den_fd += fd * fd;
        den_an += an * an;
    }
    num.sqrt() / den_fd.sqrt().max(den_an.sqrt()).max(1e-12)
}

/// Direct-loop 2-D cross-correlation with zero padding; `w` is `cout×cin×k×k`, `b` is `cout`.
pub fn conv_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape().dims();
    let [cout, cin2, kh, kw] = w.shape().dims();
    assert_eq!(cin, cin2);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor::from_fn(Shape::new(n, cout, oh, ow), |[ib, oc, oy, ox]| {
        let mut acc = b.map_or(0.0, |b| b[oc]);
        for ic in 0..cin {
            for ky in 0..kh {
                for kx in 0..kw {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    let xx = (ox * stride + kx) as isize - pad as isize;
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                        acc += x.get([ib, ic, y as usize, xx as usize]) * w.get([oc, ic, ky, kx]);
                    }
                }
            }
        }
        acc
    })
}

pub fn lrelu_ref(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v > 0.0 { v } else { 0.2 * v })
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest singular value of `w` viewed as `shape[0] × rest`, via a full SVD.
pub fn top_singular_value<T: cigan_core::autograd::Real>(w: &Tensor<T>) -> f64 {
    let rows = w.shape().batch();
    let cols = w.numel() / rows;
    let data: Vec<f64> = w.data().iter().map(|v| v.as_f64()).collect();
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, &data);
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// True when some coordinate's `±h` stencil straddles a kink of a piecewise-linear `f`:
/// there the forward and backward one-sided differences disagree.
pub fn straddles_kink(
    input: &Tensor<f64>,
    h: f64,
    seed: u64,
    f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
) -> bool {
    let f0 = project(input, seed, &f, false).0;
    (0..input.numel()).any(|i| {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let fwd = (project(&plus, seed, &f, false).0 - f0) / h;
        let bwd = (f0 - project(&minus, seed, &f, false).0) / h;
        (fwd - bwd).abs() > 1e-6 * fwd.abs().max(bwd.abs()).max(1e-3)
    })
}
