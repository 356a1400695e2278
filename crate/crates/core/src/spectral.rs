//! Spectral normalization maintained as a projection after each optimizer step.
//!
//! Every convolution kernel, viewed as a `cout × (cin·k·k)` matrix, is divided by its top
//! singular value. The estimate comes from power iteration with a persistent left vector
//! per weight. Warm vectors usually settle after one or two iterations; a large update that
//! rotates the top singular direction gets more, until the estimate stops moving.

use std::collections::BTreeMap;

use cigan_autograd::{Real, Shape, Tensor};

use crate::checkpoint::Archive;
use crate::error::Result;
use crate::nn::{ParamKind, ParamStore};
use crate::rng::Rng;

/// Below this estimate a weight is treated as zero and left alone.
pub const SIGMA_EPS: f64 = 1e-12;
/// Extra iterations stop once the estimate changes by less than this fraction.
pub const SETTLE_RTOL: f64 = 1e-4;
pub const MAX_ITERS: usize = 50;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectralNorm {
    u: BTreeMap<String, Vec<f64>>,
}

impl SpectralNorm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Normalizes every conv kernel in `store`. Vectors seen for the first time start from a
    /// name-keyed random draw and run `warmup` iterations; known ones run at least `iters` and
    /// continue until the estimate settles. Returns the largest pre-projection estimate.
    pub fn project<T: Real>(&mut self, store: &mut ParamStore<T>, seed: u64, iters: usize, warmup: usize) -> Result<f64> {
        let names: Vec<String> = store
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::ConvWeight)
            .map(|(n, _)| n.to_owned())
            .collect();
        let mut worst: f64 = 0.0;
        for name in names {
            let w = store.value_mut(&name)?;
            let rows = w.shape().batch();
            let n = match self.u.get(&name) {
                Some(u) if u.len() == rows => iters,
                _ => {
                    let mut rng = Rng::for_name(seed, &format!("{name}.sn_u"));
                    let mut u: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
                    normalize(&mut u);
                    self.u.insert(name.clone(), u);
                    warmup.max(iters)
                }
            };
            let u = self.u.get_mut(&name).expect("inserted above");
            let sigma = settled_sigma(w, u, n.max(1));
            if sigma > SIGMA_EPS {
                let inv = T::from_f64_lossy(1.0 / sigma);
                w.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            worst = worst.max(sigma);
        }
        Ok(worst)
    }

    pub fn vectors(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.u
    }

    pub fn export(&self, archive: &mut Archive, prefix: &str) {
        for (name, u) in &self.u {
            let t = Tensor::from_vec(Shape::new(1, 1, 1, u.len()), u.clone()).expect("sized");
            archive.insert_f64(format!("{prefix}{name}"), t);
        }
    }

    pub fn import(archive: &Archive, prefix: &str) -> Result<Self> {
        let mut u = BTreeMap::new();
        for name in archive.names().filter(|n| n.starts_with(prefix)) {
            let t = archive.tensor_f64(name)?;
            u.insert(name[prefix.len()..].to_owned(), t.into_vec());
        }
        Ok(SpectralNorm { u })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales to unit length; returns the original length. Tiny vectors are left untouched.
fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > SIGMA_EPS {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// At least `min_iters` power iterations, then more until the estimate settles.
fn settled_sigma<T: Real>(w: &Tensor<T>, u: &mut [f64], min_iters: usize) -> f64 {
    iterate(w, u, min_iters, MAX_ITERS.max(min_iters))
}

/// Runs `iters` power iterations on the matrix view of `w`, then divides `w` by the estimate.
/// Returns the estimate.
pub fn normalize_weight<T: Real>(w: &mut Tensor<T>, u: &mut [f64], iters: usize) -> f64 {
    let sigma = power_iteration(w, u, iters);
    if sigma > SIGMA_EPS {
        let inv = T::from_f64_lossy(1.0 / sigma);
        w.data_mut().iter_mut().for_each(|x| *x *= inv);
    }
    sigma
}

/// Top singular value estimate of `w` reshaped to `rows × rest`, refining `u` in place.
pub fn power_iteration<T: Real>(w: &Tensor<T>, u: &mut [f64], iters: usize) -> f64 {
    iterate(w, u, iters, iters)
}

/// Power iteration: exactly `min_iters` steps, then up to `max_iters` while the estimate
/// still moves by more than [`SETTLE_RTOL`].
fn iterate<T: Real>(w: &Tensor<T>, u: &mut [f64], min_iters: usize, max_iters: usize) -> f64 {
    let rows = w.shape().batch();
    let cols = w.numel() / rows.max(1);
    let data: Vec<f64> = w.data().iter().map(|x| x.as_f64()).collect();
    let mut v = vec![0.0; cols];
    let mut sigma = 0.0;
    for i in 0..max_iters {
        v.iter_mut().for_each(|x| *x = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            let row = &data[r * cols..(r + 1) * cols];
            for (vj, &wj) in v.iter_mut().zip(row) {
                *vj += ur * wj;
            }
        }
        if normalize(&mut v) <= SIGMA_EPS {
            return 0.0;
        }
        for (r, ur) in u.iter_mut().enumerate() {
            let row = &data[r * cols..(r + 1) * cols];
            *ur = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let prev = sigma;
        sigma = normalize(u);
        if sigma <= SIGMA_EPS {
            return 0.0;
        }
        if i + 1 >= min_iters && (sigma - prev).abs() <= SETTLE_RTOL * sigma {
            break;
        }
    }
    sigma
}
