//! Named parameter storage and the small layer helpers every network is built from.

use std::collections::BTreeMap;
use std::sync::Arc;

use cigan_autograd::{Graph, Real, Shape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CiganError, Result};
use crate::rng::Rng;

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Convolution kernel; subject to spectral normalization.
    ConvWeight,
    Bias,
    /// Free per-channel scalars such as FRP thetas.
    Gain,
}

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub value: Arc<Tensor<T>>,
    pub kind: ParamKind,
}

/// Ordered map of named learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) {
        self.params.insert(
            name.into(),
            Param {
                value: Arc::new(value),
                kind,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Arc<Tensor<T>>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| CiganError::Invalid(format!("unknown parameter {name}")))
    }

    /// Mutable access; copies the tensor first if a graph still shares it.
    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| Arc::make_mut(&mut p.value))
            .ok_or_else(|| CiganError::Invalid(format!("unknown parameter {name}")))
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| CiganError::Invalid(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(CiganError::Shape(format!(
                "{name}: expected {}, got {}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Moves every parameter of `other` into `self`.
    pub fn merge(&mut self, other: ParamStore<T>) {
        self.params.extend(other.params);
    }

    /// Subset whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: Arc::new(p.value.cast()),
                            kind: p.kind,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.all_finite())
    }
}

/// How a convolution's weights and bias start out.
#[derive(Clone, Copy, Debug)]
pub enum ConvInit {
    /// He-normal kernel, zero bias.
    He,
    /// He-normal kernel scaled by the factor, bias set to the constant.
    Scaled { gain: f64, bias: f64 },
    Zero,
}

/// Registers `{name}.weight` (`cout×cin×k×k`) and `{name}.bias` (`1×cout×1×1`).
///
/// Each tensor draws from its own name-keyed stream, so adding or removing other layers
/// never changes this layer's starting values.
pub fn init_conv<T: Real>(
    store: &mut ParamStore<T>,
    seed: u64,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    init: ConvInit,
) {
    let wname = format!("{name}.weight");
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    let (gain, bias) = match init {
        ConvInit::He => (1.0, 0.0),
        ConvInit::Scaled { gain, bias } => (gain, bias),
        ConvInit::Zero => (0.0, 0.0),
    };
    let mut rng = Rng::for_name(seed, &wname);
    let w = Tensor::from_fn(Shape::new(cout, cin, k, k), |_| {
        T::from_f64_lossy(gain * std * rng.normal())
    });
    store.insert(wname, w, ParamKind::ConvWeight);
    store.insert(
        format!("{name}.bias"),
        Tensor::full(Shape::new(1, cout, 1, 1), T::from_f64_lossy(bias)),
        ParamKind::Bias,
    );
}

/// Read access to a store while building a graph; `trainable` decides whether the bound
/// leaves collect gradients.
#[derive(Clone, Copy)]
pub struct Params<'a, T: Real> {
    pub store: &'a ParamStore<T>,
    pub trainable: bool,
}

impl<'a, T: Real> Params<'a, T> {
    pub fn trainable(store: &'a ParamStore<T>) -> Self {
        Params {
            store,
            trainable: true,
        }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Params {
            store,
            trainable: false,
        }
    }

    pub fn var(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        let value = self.store.value(name)?;
        Ok(g.bind(name, value, self.trainable))
    }

    pub fn conv(&self, g: &mut Graph<T>, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let w = self.var(g, &format!("{name}.weight"))?;
        let b = self.var(g, &format!("{name}.bias"))?;
        Ok(g.conv2d(x, w, Some(b), stride, pad)?)
    }

    /// `k×k` same-padding convolution followed by LeakyReLU(0.2).
    pub fn conv_lrelu(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let k = self.store.value(&format!("{name}.weight"))?.shape().height();
        let y = self.conv(g, name, x, 1, k / 2)?;
        Ok(g.leaky_relu(y, LRELU_SLOPE))
    }
}

/// Divides a base width, never going below one channel.
pub fn scaled_width(base: usize, divisor: usize) -> usize {
    (base / divisor.max(1)).max(1)
}
