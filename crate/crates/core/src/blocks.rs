//! Feature-level building blocks: guided modulation (LGT), randomized perturbation (FRP),
//! dual attention (DAM) and LIP fusion.

use cigan_autograd::{Graph, Real, Shape, Tensor, Var};

use crate::error::{CiganError, Result};
use crate::imaging::ImageTensor;
use crate::nn::{init_conv, ConvInit, ParamKind, ParamStore, Params, LRELU_SLOPE};
use crate::rng::Rng;

/// Low-light guided transformation: `content ⊙ w(ref) + b(ref)`, with `w` and `b` two 3×3
/// convolutions on top of a shared 3×3 convolution + LeakyReLU over the reference features.
#[derive(Clone, Debug)]
pub struct Lgt {
    pub prefix: String,
    pub channels: usize,
}

impl Lgt {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        Lgt {
            prefix: prefix.into(),
            channels,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) {
        let c = self.channels;
        init_conv(store, seed, &self.name("shared"), c, c, 3, ConvInit::He);
        // w starts centred on 1 so the untrained block is close to the identity.
        init_conv(store, seed, &self.name("w"), c, c, 3, ConvInit::Scaled { gain: 1.0, bias: 1.0 });
        init_conv(store, seed, &self.name("b"), c, c, 3, ConvInit::He);
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: Params<T>, content: Var, reference: Var) -> Result<Var> {
        let (cs, rs) = (g.shape(content), g.shape(reference));
        if cs != rs {
            return Err(CiganError::Shape(format!("lgt: content {cs} vs reference {rs}")));
        }
        let shared = p.conv_lrelu(g, &self.name("shared"), reference)?;
        let w = p.conv(g, &self.name("w"), shared, 1, 1)?;
        let b = p.conv(g, &self.name("b"), shared, 1, 1)?;
        let scaled = g.mul(content, w)?;
        Ok(g.add(scaled, b)?)
    }
}

/// Gaussian draws for one FRP application: `alpha` is `b×c×1×1`, `beta` is `b×1×h×w`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrpNoise<T: Real> {
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> FrpNoise<T> {
    /// Draws every `alpha` value first, then every `beta` value.
    pub fn sample(shape: Shape, rng: &mut Rng) -> Self {
        let [b, c, h, w] = shape.dims();
        let alpha = Tensor::from_fn(Shape::new(b, c, 1, 1), |_| T::from_f64_lossy(rng.normal()));
        let beta = Tensor::from_fn(Shape::new(b, 1, h, w), |_| T::from_f64_lossy(rng.normal()));
        FrpNoise { alpha, beta }
    }
}

/// `(1 + θ₁·α)·x + θ₂·β`. The noise enters as constants, so gradients reach only `x` and θ.
pub fn frp_perturb<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    theta1: Var,
    theta2: Var,
    noise: &FrpNoise<T>,
) -> Result<Var> {
    let [b, c, h, w] = g.shape(x).dims();
    if noise.alpha.shape() != Shape::new(b, c, 1, 1) || noise.beta.shape() != Shape::new(b, 1, h, w) {
        return Err(CiganError::Shape(format!(
            "frp noise {} / {} does not fit features {}",
            noise.alpha.shape(),
            noise.beta.shape(),
            g.shape(x)
        )));
    }
    let alpha = g.constant(noise.alpha.clone());
    let beta = g.constant(noise.beta.clone());
    let ta = g.mul(theta1, alpha)?;
    let scale = g.affine(ta, 1.0, 1.0);
    let scaled = g.mul(scale, x)?;
    let shift = g.mul(theta2, beta)?;
    Ok(g.add(scaled, shift)?)
}

/// Feature randomized perturbation with learnable per-channel θ₁, θ₂ (zero at init).
#[derive(Clone, Debug)]
pub struct Frp {
    pub prefix: String,
    pub channels: usize,
}

impl Frp {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        Frp {
            prefix: prefix.into(),
            channels,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        for t in ["theta1", "theta2"] {
            store.insert(
                format!("{}.{t}", self.prefix),
                Tensor::zeros(Shape::new(1, self.channels, 1, 1)),
                ParamKind::Gain,
            );
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: Params<T>, x: Var, rng: &mut Rng) -> Result<Var> {
        let noise = FrpNoise::sample(g.shape(x), rng);
        self.forward_with(g, p, x, &noise)
    }

    pub fn forward_with<T: Real>(&self, g: &mut Graph<T>, p: Params<T>, x: Var, noise: &FrpNoise<T>) -> Result<Var> {
        let t1 = p.var(g, &format!("{}.theta1", self.prefix))?;
        let t2 = p.var(g, &format!("{}.theta2", self.prefix))?;
        frp_perturb(g, x, t1, t2, noise)
    }
}

/// Squeeze statistics of the two attention branches.
#[derive(Clone, Copy, Debug)]
pub struct DamSqueeze {
    /// Mean over channels, `b×1×h×w`.
    pub channel_avg: Var,
    /// Max over channels, `b×1×h×w`.
    pub channel_max: Var,
    /// Mean over space, `b×c×1×1`.
    pub spatial_mean: Var,
    /// Unbiased standard deviation over space, `b×c×1×1`.
    pub spatial_std: Var,
}

/// Added under the square root so the std gradient stays finite on flat inputs.
pub const DAM_STD_EPS: f64 = 1e-8;

pub fn dam_squeeze<T: Real>(g: &mut Graph<T>, x: Var) -> Result<DamSqueeze> {
    let s = g.shape(x);
    let n = s.height() * s.width();
    if n < 2 {
        return Err(CiganError::Shape(format!("dam needs at least 2 spatial positions, got {s}")));
    }
    let spatial_mean = g.mean_spatial(x);
    let centered = g.sub(x, spatial_mean)?;
    let sq = g.square(centered);
    let var = g.mean_spatial(sq);
    let unbiased = g.affine(var, n as f64 / (n - 1) as f64, DAM_STD_EPS);
    let spatial_std = g.sqrt(unbiased);
    Ok(DamSqueeze {
        channel_avg: g.mean_channels(x),
        channel_max: g.max_channels(x),
        spatial_mean,
        spatial_std,
    })
}

/// Dual attention: channel gate from (mean, std), then spatial gate from (avg, max) of the
/// channel-gated features; `out = x + x ⊙ ca ⊙ sa`.
#[derive(Clone, Debug)]
pub struct Dam {
    pub prefix: String,
    pub channels: usize,
}

impl Dam {
    pub const SA_HIDDEN: usize = 8;

    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        Dam {
            prefix: prefix.into(),
            channels,
        }
    }

    pub fn hidden(&self) -> usize {
        (self.channels / 8).max(4)
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) {
        let (c, h) = (self.channels, self.hidden());
        init_conv(store, seed, &self.name("ca1"), 2 * c, h, 1, ConvInit::He);
        init_conv(store, seed, &self.name("ca2"), h, c, 1, ConvInit::He);
        init_conv(store, seed, &self.name("sa1"), 2, Self::SA_HIDDEN, 3, ConvInit::He);
        init_conv(store, seed, &self.name("sa2"), Self::SA_HIDDEN, 1, 3, ConvInit::He);
    }

    /// Channel gate `b×c×1×1` and spatial gate `b×1×h×w`, both in (0, 1).
    pub fn gates<T: Real>(&self, g: &mut Graph<T>, p: Params<T>, x: Var) -> Result<(Var, Var)> {
        let sq = dam_squeeze(g, x)?;
        let stats = g.concat_channels(&[sq.spatial_mean, sq.spatial_std])?;
        let hidden = p.conv(g, &self.name("ca1"), stats, 1, 0)?;
        let hidden = g.leaky_relu(hidden, LRELU_SLOPE);
        let ca = p.conv(g, &self.name("ca2"), hidden, 1, 0)?;
        let ca = g.sigmoid(ca);

        let y = g.mul(x, ca)?;
        let sq = dam_squeeze(g, y)?;
        let maps = g.concat_channels(&[sq.channel_avg, sq.channel_max])?;
        let hidden = p.conv_lrelu(g, &self.name("sa1"), maps)?;
        let sa = p.conv(g, &self.name("sa2"), hidden, 1, 1)?;
        let sa = g.sigmoid(sa);
        Ok((ca, sa))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: Params<T>, x: Var) -> Result<Var> {
        let (ca, sa) = self.gates(g, p, x)?;
        let y = g.mul(x, ca)?;
        let gated = g.mul(y, sa)?;
        Ok(g.add(x, gated)?)
    }
}

/// `(a + b) / (λ + a·b)` on graph values.
pub fn lip_fuse<T: Real>(g: &mut Graph<T>, a: Var, b: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(CiganError::Shape(format!("lip_fuse: {sa} vs {sb}")));
    }
    let num = g.add(a, b)?;
    let prod = g.mul(a, b)?;
    let den = g.affine(prod, 1.0, lambda);
    Ok(g.div(num, den)?)
}

/// Scalar form of [`lip_fuse`].
pub fn lip(a: f64, b: f64, lambda: f64) -> f64 {
    (a + b) / (lambda + a * b)
}

/// [`lip_fuse`] on whole images.
pub fn lip_fuse_images<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>, lambda: f64) -> Result<ImageTensor<T>> {
    check_lambda(lambda)?;
    if a.shape() != b.shape() {
        return Err(CiganError::Shape(format!("lip_fuse: {} vs {}", a.shape(), b.shape())));
    }
    let l = T::from_f64_lossy(lambda);
    let data = a
        .tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .map(|(&x, &y)| (x + y) / (l + x * y))
        .collect();
    ImageTensor::from_clamped(Tensor::from_vec(a.shape(), data)?)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 1.0) || !lambda.is_finite() {
        return Err(CiganError::Invalid(format!("lip lambda must be ≥ 1, got {lambda}")));
    }
    Ok(())
}
