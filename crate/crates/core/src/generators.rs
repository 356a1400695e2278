//! Degradation generator G_L and enhancement generator G_N.
//!
//! Both decode the five encoder scales coarse-to-fine. A decoder stage concatenates its scale's
//! features with the upsampled previous stage, applies two 3×3 conv + LeakyReLU layers, then
//! DAM. G_L additionally modulates the content features with LGT and perturbs each stage's
//! output with FRP. G_N's sigmoid output is fused with its input through LIP.

use cigan_autograd::{Graph, Real, Var};

use crate::blocks::{lip_fuse, Dam, Frp, Lgt};
use crate::config::TrainConfig;
use crate::encoder::Encoder;
use crate::error::{CiganError, Result};
use crate::imaging::ImageTensor;
use crate::nn::{init_conv, ConvInit, ParamStore, Params};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Degrade,
    Enhance,
}

/// Architecture switches shared by both generators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorOptions {
    pub lgt: bool,
    pub frp: bool,
    pub dam: bool,
    pub lip: bool,
    pub lip_lambda: f64,
}

impl From<&TrainConfig> for GeneratorOptions {
    fn from(c: &TrainConfig) -> Self {
        GeneratorOptions {
            lgt: c.lgt,
            frp: c.frp,
            dam: c.dam,
            lip: c.lip,
            lip_lambda: c.lip_lambda,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub role: Role,
    pub prefix: String,
    /// Encoder tap widths, scale 1 first. Decoder stage `s` has the same width as tap `s`.
    pub widths: [usize; 5],
    pub opts: GeneratorOptions,
}

impl Generator {
    pub fn new(role: Role, widths: [usize; 5], opts: GeneratorOptions) -> Self {
        let prefix = match role {
            Role::Degrade => "gl",
            Role::Enhance => "gn",
        };
        Generator {
            role,
            prefix: prefix.into(),
            widths,
            opts,
        }
    }

    fn has_lgt(&self) -> bool {
        self.role == Role::Degrade && self.opts.lgt
    }

    fn has_frp(&self) -> bool {
        self.role == Role::Degrade && self.opts.frp
    }

    fn stage(&self, scale: usize, part: &str) -> String {
        format!("{}.dec{scale}.{part}", self.prefix)
    }

    pub fn lgt(&self, scale: usize) -> Lgt {
        Lgt::new(format!("{}.lgt{scale}", self.prefix), self.widths[scale - 1])
    }

    pub fn frp(&self, scale: usize) -> Frp {
        Frp::new(self.stage(scale, "frp"), self.widths[scale - 1])
    }

    pub fn dam(&self, scale: usize) -> Dam {
        Dam::new(self.stage(scale, "dam"), self.widths[scale - 1])
    }

    pub fn head_name(&self) -> String {
        format!("{}.head", self.prefix)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) {
        for scale in (1..=5).rev() {
            let w = self.widths[scale - 1];
            let cin = w + if scale < 5 { self.widths[scale] } else { 0 };
            init_conv(store, seed, &self.stage(scale, "conv1"), cin, w, 3, ConvInit::He);
            init_conv(store, seed, &self.stage(scale, "conv2"), w, w, 3, ConvInit::He);
            if self.opts.dam {
                self.dam(scale).init(store, seed);
            }
            if self.has_frp() {
                self.frp(scale).init(store);
            }
            if self.has_lgt() {
                self.lgt(scale).init(store, seed);
            }
        }
        init_conv(store, seed, &self.head_name(), self.widths[0], 3, 3, ConvInit::He);
    }

    /// Decoder pre-activation output (3 channels, input resolution).
    ///
    /// `reference` holds the low-light reference taps for LGT; `rng = None` skips FRP.
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: Params<T>,
        taps: &[Var],
        reference: Option<&[Var]>,
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        if taps.len() != 5 {
            return Err(CiganError::Shape(format!("decoder needs 5 taps, got {}", taps.len())));
        }
        let mut prev: Option<Var> = None;
        for scale in (1..=5).rev() {
            let mut feat = taps[scale - 1];
            if self.has_lgt() {
                let r = reference.ok_or_else(|| CiganError::Invalid("degrade needs reference features".into()))?;
                feat = self.lgt(scale).forward(g, p, feat, r[scale - 1])?;
            }
            let x = match prev {
                Some(pv) => {
                    let s = g.shape(feat);
                    let up = g.upsample_nearest(pv, s.height(), s.width())?;
                    g.concat_channels(&[feat, up])?
                }
                None => feat,
            };
            let mut h = p.conv_lrelu(g, &self.stage(scale, "conv1"), x)?;
            h = p.conv_lrelu(g, &self.stage(scale, "conv2"), h)?;
            if self.opts.dam {
                h = self.dam(scale).forward(g, p, h)?;
            }
            if self.has_frp() {
                if let Some(r) = rng.as_deref_mut() {
                    h = self.frp(scale).forward(g, p, h, r)?;
                }
            }
            prev = Some(h);
        }
        p.conv(g, &self.head_name(), prev.expect("five stages ran"), 1, 1)
    }

    /// Synthetic low-light image `sigmoid(decoder)` from normal-light taps.
    pub fn degrade_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: Params<T>,
        content: &[Var],
        reference: &[Var],
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let z = self.decode(g, p, content, Some(reference), rng)?;
        Ok(g.sigmoid(z))
    }

    /// Enhanced image: LIP fusion of `sigmoid(decoder)` with the input, or with LIP off the
    /// input plus a residual in (−1, 1), clamped to [0, 1].
    pub fn enhance_graph<T: Real>(&self, g: &mut Graph<T>, p: Params<T>, taps: &[Var], low: Var) -> Result<Var> {
        let z = self.decode(g, p, taps, None, None)?;
        let out = g.sigmoid(z);
        if self.opts.lip {
            lip_fuse(g, out, low, self.opts.lip_lambda)
        } else {
            let residual = g.affine(out, 2.0, -1.0);
            let sum = g.add(low, residual)?;
            Ok(g.clamp(sum, 0.0, 1.0))
        }
    }
}

/// The two generators of the cycle, sharing one parameter store (`gl.*` and `gn.*`).
#[derive(Clone, Debug)]
pub struct Generators {
    pub degrade: Generator,
    pub enhance: Generator,
}

impl Generators {
    pub fn new(widths: [usize; 5], opts: GeneratorOptions) -> Self {
        Generators {
            degrade: Generator::new(Role::Degrade, widths, opts),
            enhance: Generator::new(Role::Enhance, widths, opts),
        }
    }

    pub fn from_config(cfg: &TrainConfig, encoder_widths: [usize; 5]) -> Self {
        Self::new(encoder_widths, GeneratorOptions::from(cfg))
    }

    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut store = ParamStore::new();
        self.degrade.init(&mut store, seed);
        self.enhance.init(&mut store, seed);
        store
    }
}

/// Synthesizes a low-light version of `normal` guided by `reference_low`. FRP draws from
/// `rng` unless `deterministic`.
pub fn degrade<T: Real>(
    gen: &Generator,
    encoder: &Encoder<T>,
    params: &ParamStore<T>,
    normal: &ImageTensor<T>,
    reference_low: &ImageTensor<T>,
    rng: &mut Rng,
    deterministic: bool,
) -> Result<ImageTensor<T>> {
    normal.require_network_input("degrade")?;
    reference_low.require_network_input("degrade reference")?;
    let (ns, rs) = (normal.shape(), reference_low.shape());
    if (ns.height(), ns.width()) != (rs.height(), rs.width()) || ns.batch() != rs.batch() {
        return Err(CiganError::Shape(format!("degrade: normal {ns} vs reference {rs}")));
    }
    let mut g = Graph::new();
    let x = g.constant(normal.tensor().clone());
    let content = encoder.forward(&mut g, x, 5)?;
    let reference = if gen.has_lgt() {
        let r = g.constant(reference_low.tensor().clone());
        encoder.forward(&mut g, r, 5)?
    } else {
        content.clone()
    };
    let rng = if deterministic { None } else { Some(rng) };
    let y = gen.degrade_graph(&mut g, Params::frozen(params), &content, &reference, rng)?;
    ImageTensor::from_clamped(g.value(y).clone())
}

/// Deterministic enhancement of a low-light image.
pub fn enhance<T: Real>(
    gen: &Generator,
    encoder: &Encoder<T>,
    params: &ParamStore<T>,
    low: &ImageTensor<T>,
) -> Result<ImageTensor<T>> {
    low.require_network_input("enhance")?;
    let mut g = Graph::new();
    let x = g.constant(low.tensor().clone());
    let taps = encoder.forward(&mut g, x, 5)?;
    let y = gen.enhance_graph(&mut g, Params::frozen(params), &taps, x)?;
    ImageTensor::from_clamped(g.value(y).clone())
}
