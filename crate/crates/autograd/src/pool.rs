//! Spatial resampling and pooling kernels.

use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// 2×2 / stride 2 max pool in ceil mode. Returns output and flat argmax per output element.
pub(crate) fn max_pool2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [b, c, h, w] = x.shape().dims();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    let src = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = base + 2 * oy * w + 2 * ox;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        let i = base + y * w + xx;
                        // NaN-propagating: first NaN wins.
                        if src[i] > best || src[i].is_nan() && !best.is_nan() {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (
        Tensor::from_vec(Shape::new(b, c, oh, ow), out).unwrap(),
        arg,
    )
}

/// Source index along one axis for nearest-neighbour resize.
fn nearest(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (dst * src_len / dst_len).min(src_len - 1)
}

pub(crate) fn upsample_nearest<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let [b, c, h, w] = x.shape().dims();
    let src = x.data();
    let cols: Vec<usize> = (0..ow).map(|ox| nearest(ox, w, ow)).collect();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let row = base + nearest(oy, h, oh) * w;
            out.extend(cols.iter().map(|&ix| src[row + ix]));
        }
    }
    Tensor::from_vec(Shape::new(b, c, oh, ow), out).unwrap()
}

pub(crate) fn upsample_nearest_backward<T: Real>(dy: &Tensor<T>, in_shape: Shape) -> Tensor<T> {
    let [b, c, h, w] = in_shape.dims();
    let [_, _, oh, ow] = dy.shape().dims();
    let mut dx = Tensor::zeros(in_shape);
    let cols: Vec<usize> = (0..ow).map(|ox| nearest(ox, w, ow)).collect();
    let g = dy.data();
    let d = dx.data_mut();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let row = base + nearest(oy, h, oh) * w;
            let grow = &g[(plane * oh + oy) * ow..(plane * oh + oy + 1) * ow];
            for (ox, &ix) in cols.iter().enumerate() {
                d[row + ix] += grow[ox];
            }
        }
    }
    dx
}

/// Mean over non-overlapping `k×k` tiles; edge tiles average over the pixels they contain.
pub(crate) fn region_mean<T: Real>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let [b, c, h, w] = x.shape().dims();
    let (oh, ow) = (h.div_ceil(k), w.div_ceil(k));
    let src = x.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let base = plane * h * w;
        let obase = plane * oh * ow;
        for y in 0..h {
            for xx in 0..w {
                out[obase + (y / k) * ow + xx / k] += src[base + y * w + xx];
            }
        }
        for oy in 0..oh {
            let ny = (h - oy * k).min(k);
            for ox in 0..ow {
                let nx = (w - ox * k).min(k);
                out[obase + oy * ow + ox] /= T::from_usize(ny * nx).unwrap();
            }
        }
    }
    Tensor::from_vec(Shape::new(b, c, oh, ow), out).unwrap()
}

pub(crate) fn region_mean_backward<T: Real>(dy: &Tensor<T>, in_shape: Shape, k: usize) -> Tensor<T> {
    let [b, c, h, w] = in_shape.dims();
    let [_, _, oh, ow] = dy.shape().dims();
    let g = dy.data();
    let mut dx = Tensor::zeros(in_shape);
    let d = dx.data_mut();
    for plane in 0..b * c {
        let base = plane * h * w;
        let obase = plane * oh * ow;
        for y in 0..h {
            let ny = (h - (y / k) * k).min(k);
            for xx in 0..w {
                let nx = (w - (xx / k) * k).min(k);
                d[base + y * w + xx] =
                    g[obase + (y / k) * ow + xx / k] / T::from_usize(ny * nx).unwrap();
            }
        }
    }
    dx
}

/// Max over the channel axis, keeping a singleton channel. Returns argmax channel per output.
pub(crate) fn channel_max<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [b, c, h, w] = x.shape().dims();
    let plane = h * w;
    let src = x.data();
    let mut out = Vec::with_capacity(b * plane);
    let mut arg = Vec::with_capacity(b * plane);
    for ib in 0..b {
        for p in 0..plane {
            let mut best = src[ib * c * plane + p];
            let mut best_c = 0;
            for ic in 1..c {
                let v = src[(ib * c + ic) * plane + p];
                if v > best {
                    best = v;
                    best_c = ic;
                }
            }
            out.push(best);
            arg.push(best_c as u32);
        }
    }
    (Tensor::from_vec(Shape::new(b, 1, h, w), out).unwrap(), arg)
}
