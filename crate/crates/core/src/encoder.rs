//! Frozen VGG-19-shaped feature extractor up to `relu5_1`.

use std::path::Path;

use cigan_autograd::{Graph, Real, Shape, Tensor, Var};

use crate::checkpoint;
use crate::error::{CiganError, Result};
use crate::imaging::ImageTensor;
use crate::nn::{init_conv, scaled_width, ConvInit, ParamStore, Params};

pub const TAPS: [&str; 5] = ["relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"];

/// Channel counts of the five taps at full width.
pub const TAP_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Convolutions per block; a tap follows the first convolution of each block.
const BLOCK_DEPTH: [usize; 5] = [2, 2, 4, 4, 1];

/// One scale of the pyramid. `scale` runs from 1 (full resolution) to 5.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T: Real> {
    pub data: Tensor<T>,
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T: Real> {
    pub maps: Vec<FeatureMap<T>>,
}

#[derive(Clone, Debug)]
pub struct Encoder<T: Real> {
    store: ParamStore<T>,
    widths: [usize; 5],
    imagenet_normalize: bool,
}

impl<T: Real> Encoder<T> {
    /// Deterministic He-initialized weights. Inputs are used as-is.
    pub fn random(seed: u64, width_divisor: usize) -> Self {
        let widths = TAP_CHANNELS.map(|c| scaled_width(c, width_divisor));
        let mut store = ParamStore::new();
        for (name, cin, cout) in conv_layers(widths) {
            init_conv(&mut store, seed, &name, cin, cout, 3, ConvInit::He);
        }
        Encoder {
            store,
            widths,
            imagenet_normalize: false,
        }
    }

    /// Pretrained weights from a tensor archive holding `convB_L.weight` / `convB_L.bias`
    /// for every layer up to `conv5_1`. Inputs are ImageNet-normalized.
    pub fn from_file(path: &Path) -> Result<Self> {
        let ckpt = checkpoint::read(path)?;
        let mut store = ParamStore::new();
        for (name, cin, cout) in conv_layers(TAP_CHANNELS) {
            for (suffix, shape) in [
                ("weight", Shape::new(cout, cin, 3, 3)),
                ("bias", Shape::new(1, cout, 1, 1)),
            ] {
                let key = format!("{name}.{suffix}");
                let t = ckpt.tensor_f32(&key)?;
                // Accept rank-1 biases stored as [1, 1, 1, cout] too.
                let t = if t.shape() != shape && t.numel() == shape.numel() {
                    t.reshape(shape)?
                } else {
                    t
                };
                if t.shape() != shape {
                    return Err(CiganError::Checkpoint {
                        path: path.to_owned(),
                        message: format!("{key}: expected {shape}, found {}", t.shape()),
                    });
                }
                let kind = if suffix == "weight" {
                    crate::nn::ParamKind::ConvWeight
                } else {
                    crate::nn::ParamKind::Bias
                };
                store.insert(key, t.cast(), kind);
            }
        }
        Ok(Encoder {
            store,
            widths: TAP_CHANNELS,
            imagenet_normalize: true,
        })
    }

    pub fn widths(&self) -> [usize; 5] {
        self.widths
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            store: self.store.cast(),
            widths: self.widths,
            imagenet_normalize: self.imagenet_normalize,
        }
    }

    /// Taps 1..=`depth` of `x`. Backbone leaves are bound frozen; gradients still reach `x`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, depth: usize) -> Result<Vec<Var>> {
        let s = g.shape(x);
        if s.channels() != 3 || s.height() < 2 || s.width() < 2 {
            return Err(CiganError::Shape(format!("encoder input {s} must be 3-channel")));
        }
        let depth = depth.clamp(1, 5);
        let p = Params::frozen(&self.store);
        let mut h = if self.imagenet_normalize {
            let mean = g.constant(channel_constant(IMAGENET_MEAN));
            let std = g.constant(channel_constant(IMAGENET_STD));
            let centered = g.sub(x, mean)?;
            g.div(centered, std)?
        } else {
            x
        };
        let mut taps = Vec::with_capacity(depth);
        for block in 0..depth {
            if block > 0 {
                h = g.max_pool2(h);
            }
            for layer in 0..BLOCK_DEPTH[block] {
                let y = p.conv(g, &format!("conv{}_{}", block + 1, layer + 1), h, 1, 1)?;
                h = g.relu(y);
                if layer == 0 {
                    taps.push(h);
                    if block + 1 == depth {
                        return Ok(taps);
                    }
                }
            }
        }
        Ok(taps)
    }

    pub fn extract_pyramid(&self, img: &ImageTensor<T>) -> Result<FeaturePyramid<T>> {
        img.require_network_input("extract_pyramid")?;
        let mut g = Graph::new();
        let x = g.constant(img.tensor().clone());
        let taps = self.forward(&mut g, x, 5)?;
        Ok(FeaturePyramid {
            maps: taps
                .into_iter()
                .enumerate()
                .map(|(i, v)| FeatureMap {
                    data: g.value(v).clone(),
                    scale: i + 1,
                })
                .collect(),
        })
    }

    pub fn extract_layer(&self, img: &ImageTensor<T>, tap: &str) -> Result<FeatureMap<T>> {
        let index = tap_index(tap)?;
        img.require_network_input("extract_layer")?;
        let mut g = Graph::new();
        let x = g.constant(img.tensor().clone());
        let taps = self.forward(&mut g, x, index + 1)?;
        Ok(FeatureMap {
            data: g.value(taps[index]).clone(),
            scale: index + 1,
        })
    }
}

/// Zero-based index of a tap name.
pub fn tap_index(tap: &str) -> Result<usize> {
    TAPS.iter()
        .position(|t| *t == tap)
        .ok_or_else(|| CiganError::Invalid(format!("unknown tap {tap}; expected one of {TAPS:?}")))
}

/// `(name, in_channels, out_channels)` of every convolution up to `conv5_1`.
pub fn conv_layers(widths: [usize; 5]) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut cin = 3;
    for (block, &depth) in BLOCK_DEPTH.iter().enumerate() {
        for layer in 0..depth {
            out.push((format!("conv{}_{}", block + 1, layer + 1), cin, widths[block]));
            cin = widths[block];
        }
    }
    out
}

fn channel_constant<T: Real>(v: [f64; 3]) -> Tensor<T> {
    Tensor::from_fn(Shape::new(1, 3, 1, 1), |[_, c, _, _]| T::from_f64_lossy(v[c]))
}
