//! Multi-scale feature pyramid discriminator.
//!
//! Five stride-2 3×3 conv + LeakyReLU stages; 1×1 heads on stages 3, 4 and 5 emit raw patch
//! logits. With the pyramid disabled only the stage-5 head is used.

use cigan_autograd::{Graph, Real, Tensor, Var};

use crate::error::{CiganError, Result};
use crate::imaging::ImageTensor;
use crate::nn::{init_conv, scaled_width, ConvInit, ParamStore, Params};

pub const STAGE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
const PYRAMID_STAGES: [usize; 3] = [3, 4, 5];

/// Patch logits of one discriminator pass, one map per pyramid level.
#[derive(Clone, Debug)]
pub struct ScoreSet {
    pub levels: Vec<Var>,
}

/// Evaluated scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores<T: Real> {
    pub pyramid_logits: Vec<Tensor<T>>,
    /// Per image: the mean over all of its logits at every level.
    pub aggregate: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub prefix: String,
    pub widths: [usize; 5],
    pub pyramid: bool,
}

impl Discriminator {
    pub fn new(prefix: impl Into<String>, width_divisor: usize, pyramid: bool) -> Self {
        Discriminator {
            prefix: prefix.into(),
            widths: STAGE_WIDTHS.map(|w| scaled_width(w, width_divisor)),
            pyramid,
        }
    }

    pub fn head_stages(&self) -> &'static [usize] {
        if self.pyramid {
            &PYRAMID_STAGES
        } else {
            &PYRAMID_STAGES[2..]
        }
    }

    fn stage(&self, i: usize) -> String {
        format!("{}.s{i}", self.prefix)
    }

    fn head(&self, i: usize) -> String {
        format!("{}.head{i}", self.prefix)
    }

    /// Heads start at zero so an untrained discriminator scores every input 0.
    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut store = ParamStore::new();
        let mut cin = 3;
        for i in 1..=5 {
            init_conv(&mut store, seed, &self.stage(i), cin, self.widths[i - 1], 3, ConvInit::He);
            cin = self.widths[i - 1];
        }
        for &i in self.head_stages() {
            init_conv(&mut store, seed, &self.head(i), self.widths[i - 1], 1, 1, ConvInit::Zero);
        }
        store
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: Params<T>, x: Var) -> Result<ScoreSet> {
        let s = g.shape(x);
        if s.channels() != 3 || s.height() < crate::imaging::MIN_EXTENT || s.width() < crate::imaging::MIN_EXTENT {
            return Err(CiganError::Shape(format!("discriminator input {s} must be 3×≥32×≥32")));
        }
        let mut h = x;
        let mut levels = Vec::new();
        for i in 1..=5 {
            let y = p.conv(g, &self.stage(i), h, 2, 1)?;
            h = g.leaky_relu(y, crate::nn::LRELU_SLOPE);
            if self.head_stages().contains(&i) {
                levels.push(p.conv(g, &self.head(i), h, 1, 0)?);
            }
        }
        Ok(ScoreSet { levels })
    }

    pub fn score<T: Real>(&self, params: &ParamStore<T>, img: &ImageTensor<T>) -> Result<Scores<T>> {
        let mut g = Graph::new();
        let x = g.constant(img.tensor().clone());
        let set = self.forward(&mut g, Params::frozen(params), x)?;
        let agg = aggregate(&mut g, &set)?;
        Ok(Scores {
            pyramid_logits: set.levels.iter().map(|&v| g.value(v).clone()).collect(),
            aggregate: g.value(agg).data().iter().map(|v| v.as_f64()).collect(),
        })
    }
}

/// Per-image score `b×1×1×1`: the mean over that image's logits at every level.
pub fn aggregate<T: Real>(g: &mut Graph<T>, set: &ScoreSet) -> Result<Var> {
    if set.levels.is_empty() {
        return Err(CiganError::Invalid("empty score set".into()));
    }
    let sizes: Vec<usize> = set.levels.iter().map(|&v| g.shape(v).numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut terms = Vec::with_capacity(sizes.len());
    for (&l, n) in set.levels.iter().zip(sizes) {
        let m = g.mean_axes(l, [false, true, true, true]);
        terms.push(g.affine(m, n as f64 / total as f64, 0.0));
    }
    Ok(g.sum_all(&terms)?)
}
