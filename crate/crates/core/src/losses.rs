//! Exposure, relativistic average hinge, cycle and perceptual objectives.

use cigan_autograd::{Graph, Real, Var};
use serde::{Deserialize, Serialize};

use crate::discriminators::ScoreSet;
use crate::encoder::Encoder;
use crate::error::{CiganError, Result};

/// Tap used by the perceptual loss (`relu4_1`).
pub const PERCEPTUAL_DEPTH: usize = 4;

/// Mean over local regions of `1 − exp(−(i − e)² / 2σ²)`, where `i` is the mean intensity of
/// each non-overlapping `window×window` tile. With `gray` the intensity is the RGB mean,
/// otherwise each channel is scored on its own.
pub fn exposure_loss<T: Real>(
    g: &mut Graph<T>,
    img: Var,
    e: f64,
    sigma: f64,
    window: usize,
    gray: bool,
) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(CiganError::Invalid(format!("exposure sigma must be > 0, got {sigma}")));
    }
    let x = if gray { g.mean_channels(img) } else { img };
    let i = g.region_mean(x, window)?;
    let d = g.affine(i, 1.0, -e);
    let sq = g.square(d);
    let arg = g.affine(sq, -1.0 / (2.0 * sigma * sigma), 0.0);
    let gauss = g.exp(arg);
    let pen = g.affine(gauss, -1.0, 1.0);
    Ok(g.mean_all(pen))
}

fn check_sets(fake: &ScoreSet, real: &ScoreSet) -> Result<()> {
    if fake.levels.is_empty() || real.levels.is_empty() {
        return Err(CiganError::Invalid("empty score set".into()));
    }
    if fake.levels.len() != real.levels.len() {
        return Err(CiganError::Invalid(format!(
            "score sets have {} and {} levels",
            fake.levels.len(),
            real.levels.len()
        )));
    }
    Ok(())
}

/// Share of each level in the set's logits, so level means combine into the mean over all logits.
fn level_weights<T: Real>(g: &Graph<T>, set: &ScoreSet) -> Vec<f64> {
    let sizes: Vec<usize> = set.levels.iter().map(|&v| g.shape(v).numel()).collect();
    let total: usize = sizes.iter().sum();
    sizes.iter().map(|&n| n as f64 / total as f64).collect()
}

/// Mean of `f(logit)` over every logit of `set`.
fn set_mean<T: Real>(
    g: &mut Graph<T>,
    set: &ScoreSet,
    f: impl Fn(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let weights = level_weights(g, set);
    let mut terms = Vec::with_capacity(set.levels.len());
    for (&l, w) in set.levels.iter().zip(weights) {
        let y = f(g, l)?;
        let m = g.mean_all(y);
        terms.push(g.affine(m, w, 0.0));
    }
    Ok(g.sum_all(&terms)?)
}

/// `E_x[max(0, 1 + s·(x − E[y]))]`, expectations over all logits of each set.
fn hinge_term<T: Real>(g: &mut Graph<T>, x: &ScoreSet, y: &ScoreSet, s: f64) -> Result<Var> {
    let my = set_mean(g, y, |_, v| Ok(v))?;
    set_mean(g, x, |g, v| {
        let d = g.sub(v, my)?;
        let h = g.affine(d, s, 1.0);
        Ok(g.relu(h))
    })
}

fn rahinge<T: Real>(g: &mut Graph<T>, fake: &ScoreSet, real: &ScoreSet, fake_sign: f64) -> Result<Var> {
    check_sets(fake, real)?;
    let f = hinge_term(g, fake, real, fake_sign)?;
    let r = hinge_term(g, real, fake, -fake_sign)?;
    Ok(g.add(f, r)?)
}

/// `E_f[max(0, 1 − (D(f) − E D(r)))] + E_r[max(0, 1 + (D(r) − E D(f)))]`.
pub fn rahinge_generator_loss<T: Real>(g: &mut Graph<T>, fake: &ScoreSet, real: &ScoreSet) -> Result<Var> {
    rahinge(g, fake, real, -1.0)
}

/// `E_f[max(0, 1 + (D(f) − E D(r)))] + E_r[max(0, 1 − (D(r) − E D(f)))]`.
pub fn rahinge_discriminator_loss<T: Real>(g: &mut Graph<T>, fake: &ScoreSet, real: &ScoreSet) -> Result<Var> {
    rahinge(g, fake, real, 1.0)
}

pub fn mean_abs_diff<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, a, b)?;
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean_all(d))
}

/// `sqrt(mean((a − b)²))`.
pub fn rms_diff<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, a, b)?;
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    let m = g.mean_all(sq);
    Ok(g.sqrt(m))
}

fn same_shape<T: Real>(g: &Graph<T>, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(CiganError::Shape(format!("{} vs {}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Inputs and their cycled reconstructions. `phi_in_*` may carry precomputed `relu4_1`
/// features of the inputs; otherwise they are extracted.
pub struct CycleInputs {
    pub in_n: Var,
    pub cyc_n: Var,
    pub in_l: Var,
    pub cyc_l: Var,
    pub phi_in_n: Option<Var>,
    pub phi_in_l: Option<Var>,
}

/// Cycle reconstruction terms `(l_con, l_per)` summed over both directions.
pub fn cycle_losses<T: Real>(g: &mut Graph<T>, encoder: &Encoder<T>, c: &CycleInputs) -> Result<(Var, Var)> {
    let con_n = mean_abs_diff(g, c.in_n, c.cyc_n)?;
    let con_l = mean_abs_diff(g, c.in_l, c.cyc_l)?;
    let l_con = g.add(con_n, con_l)?;
    let phi = |g: &mut Graph<T>, x: Var, cached: Option<Var>| -> Result<Var> {
        match cached {
            Some(v) => Ok(v),
            None => Ok(encoder.forward(g, x, PERCEPTUAL_DEPTH)?[PERCEPTUAL_DEPTH - 1]),
        }
    };
    let fin_n = phi(g, c.in_n, c.phi_in_n)?;
    let fcyc_n = phi(g, c.cyc_n, None)?;
    let fin_l = phi(g, c.in_l, c.phi_in_l)?;
    let fcyc_l = phi(g, c.cyc_l, None)?;
    let per_n = rms_diff(g, fin_n, fcyc_n)?;
    let per_l = rms_diff(g, fin_l, fcyc_l)?;
    let l_per = g.add(per_n, per_l)?;
    Ok((l_con, l_per))
}

/// Per-step scalar losses as logged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub lg_adv_l: f64,
    pub lg_adv_n: f64,
    pub l_exp: f64,
    pub l_con: f64,
    pub l_per: f64,
    pub lg_total: f64,
    pub ld_l: f64,
    pub ld_n: f64,
    pub ld_total: f64,
}

impl LossBundle {
    pub fn values(&self) -> [f64; 9] {
        [
            self.lg_adv_l,
            self.lg_adv_n,
            self.l_exp,
            self.l_con,
            self.l_per,
            self.lg_total,
            self.ld_l,
            self.ld_n,
            self.ld_total,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub exp: f64,
    pub con: f64,
    pub per: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            exp: 10.0,
            con: 10.0,
            per: 1.0,
        }
    }
}

pub fn total_generator_loss(b: &LossBundle, w: LossWeights) -> f64 {
    b.lg_adv_l + b.lg_adv_n + w.exp * b.l_exp + w.con * b.l_con + w.per * b.l_per
}

pub fn total_discriminator_loss(b: &LossBundle) -> f64 {
    b.ld_l + b.ld_n
}
