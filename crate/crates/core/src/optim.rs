//! Adam with per-parameter moments keyed by name.

use std::collections::BTreeMap;

use cigan_autograd::{Gradients, Real, Tensor};

use crate::checkpoint::Archive;
use crate::error::{CiganError, Result};
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps.
    pub t: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected update of every parameter in `store` that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step = T::from_f64_lossy(lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(self.eps);
        let names: Vec<String> = store.names().map(str::to_owned).collect();
        for name in names {
            let Some(g) = grads.by_name(&name) else { continue };
            if !g.all_finite() {
                return Err(CiganError::Invalid(format!("non-finite gradient for {name}")));
            }
            let p = store.value_mut(&name)?;
            if p.shape() != g.shape() {
                return Err(CiganError::Shape(format!("{name}: gradient {} vs parameter {}", g.shape(), p.shape())));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *pi -= step * *mi / ((*vi * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn export(&self, archive: &mut Archive, prefix: &str) {
        for (name, m) in &self.m {
            archive.insert_f32(format!("{prefix}m.{name}"), m.cast());
        }
        for (name, v) in &self.v {
            archive.insert_f32(format!("{prefix}v.{name}"), v.cast());
        }
    }

    /// Restores moments written by [`Adam::export`]; hyperparameters and `t` come from the caller.
    pub fn import(&mut self, archive: &Archive, prefix: &str) -> Result<()> {
        self.m.clear();
        self.v.clear();
        let mp = format!("{prefix}m.");
        let vp = format!("{prefix}v.");
        for name in archive.names() {
            if let Some(rest) = name.strip_prefix(&mp) {
                self.m.insert(rest.to_owned(), archive.tensor_f32(name)?.cast());
            } else if let Some(rest) = name.strip_prefix(&vp) {
                self.v.insert(rest.to_owned(), archive.tensor_f32(name)?.cast());
            }
        }
        Ok(())
    }
}
