//! im2col convolution kernels. Weights are `[out, in, kh, kw]`, activations NCHW.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(x: Shape, w: Shape, stride: usize, pad: usize) -> Result<Self> {
        let [_, cin, h, wd] = x.dims();
        let [cout, wcin, kh, kw] = w.dims();
        if cin != wcin || stride == 0 {
            return Err(TensorError::Mismatch {
                op: "conv2d",
                lhs: x,
                rhs: w,
            });
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(TensorError::Invalid(format!(
                "conv2d: input {x} smaller than kernel {w} with padding {pad}"
            )));
        }
        Ok(ConvGeometry {
            in_channels: cin,
            out_channels: cout,
            kh,
            kw,
            stride,
            pad,
            h,
            w: wd,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output positions `o` with `o*stride + k - pad` inside `[0, n)`.
    fn valid_range(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= n-1
        let hi_excl = if (n as isize - 1 - off) < 0 {
            0
        } else {
            (n as isize - 1 - off) / s + 1
        };
        let lo = lo.max(0) as usize;
        let hi = (hi_excl.max(0) as usize).min(out);
        (lo.min(hi), hi)
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let n = g.col_cols();
    let plane = g.h * g.w;
    for c in 0..g.in_channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid_range(kx, g.w, g.ow);
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                dst.fill(T::zero());
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let src_row = &src[iy * g.w..(iy + 1) * g.w];
                    let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let ix0 = ox0 + kx - g.pad;
                        dst_row[ox0..ox1].copy_from_slice(&src_row[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst_row[ox] = src_row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let n = g.col_cols();
    let plane = g.h * g.w;
    for c in 0..g.in_channels {
        let dst = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid_range(kx, g.w, g.ow);
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                    let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox0..ox1 {
                        dst_row[ox * g.stride + kx - g.pad] += src_row[ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride, pad)?;
    if let Some(b) = b {
        if b.numel() != g.out_channels {
            return Err(TensorError::Mismatch {
                op: "conv2d bias",
                lhs: w.shape(),
                rhs: b.shape(),
            });
        }
    }
    let batch = x.shape().batch();
    let (k, n) = (g.col_rows(), g.col_cols());
    let in_plane = g.in_channels * g.h * g.w;
    let out_plane = g.out_channels * n;
    let mut out = vec![T::zero(); batch * out_plane];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * n]
    };
    for ib in 0..batch {
        let xb = &x.data()[ib * in_plane..(ib + 1) * in_plane];
        let ob = &mut out[ib * out_plane..(ib + 1) * out_plane];
        if let Some(b) = b {
            for (co, chunk) in ob.chunks_mut(n).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let rhs: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut col);
            &col
        };
        T::gemm(
            g.out_channels,
            k,
            n,
            T::one(),
            w.data(),
            (k as isize, 1),
            rhs,
            (n as isize, 1),
            beta,
            ob,
            (n as isize, 1),
        );
    }
    Tensor::from_vec(Shape::new(batch, g.out_channels, g.oh, g.ow), out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias_shape: Option<Shape>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride, pad)?;
    let batch = x.shape().batch();
    let (k, n) = (g.col_rows(), g.col_cols());
    let in_plane = g.in_channels * g.h * g.w;
    let out_plane = g.out_channels * n;
    let mut dx = need_dx.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.numel()]);
    let pointwise = g.is_pointwise();
    let mut col = if need_dw && !pointwise {
        vec![T::zero(); k * n]
    } else {
        Vec::new()
    };
    let mut dcol = if need_dx && !pointwise {
        vec![T::zero(); k * n]
    } else {
        Vec::new()
    };
    for ib in 0..batch {
        let dyb = &dy.data()[ib * out_plane..(ib + 1) * out_plane];
        let xb = &x.data()[ib * in_plane..(ib + 1) * in_plane];
        if let Some(dw) = dw.as_mut() {
            let cols: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            // dW[out, k] += dY[out, n] · colᵀ[n, k]
            T::gemm(
                g.out_channels,
                n,
                k,
                T::one(),
                dyb,
                (n as isize, 1),
                cols,
                (1, n as isize),
                T::one(),
                dw,
                (k as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[ib * in_plane..(ib + 1) * in_plane];
            // dcol[k, n] = Wᵀ[k, out] · dY[out, n]
            if pointwise {
                T::gemm(
                    k,
                    g.out_channels,
                    n,
                    T::one(),
                    w.data(),
                    (1, k as isize),
                    dyb,
                    (n as isize, 1),
                    T::zero(),
                    dxb,
                    (n as isize, 1),
                );
            } else {
                T::gemm(
                    k,
                    g.out_channels,
                    n,
                    T::one(),
                    w.data(),
                    (1, k as isize),
                    dyb,
                    (n as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (n as isize, 1),
                );
                col2im(&dcol, &g, dxb);
            }
        }
    }
    let db = bias_shape.map(|shape| {
        let mut acc = vec![T::zero(); g.out_channels];
        for ib in 0..batch {
            let dyb = &dy.data()[ib * out_plane..(ib + 1) * out_plane];
            for (co, chunk) in dyb.chunks(n).enumerate() {
                acc[co] += chunk.iter().copied().sum::<T>();
            }
        }
        Tensor::from_vec(shape, acc).expect("bias numel checked in forward")
    });
    Ok(ConvGrads {
        dx: dx.map(|d| Tensor::from_vec(x.shape(), d).unwrap()),
        dw: dw.map(|d| Tensor::from_vec(w.shape(), d).unwrap()),
        db,
    })
}
