//! The cycle training loop: generator update, discriminator update, spectral-norm
//! projection, loss logging and checkpointing.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cigan_autograd::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Archive};
use crate::config::{lr_schedule, TrainConfig};
use crate::data::{SamplerState, UnpairedDataset};
use crate::discriminators::Discriminator;
use crate::encoder::Encoder;
use crate::error::{CiganError, Result};
use crate::generators::Generators;
use crate::imaging::ImageTensor;
use crate::losses::{self, CycleInputs, LossBundle, LossWeights};
use crate::nn::{ParamStore, Params};
use crate::optim::Adam;
use crate::rng::{Rng, RngState};
use crate::spectral::SpectralNorm;

pub const LOSS_HEADER: &str = "step,epoch,lg_adv_L,lg_adv_N,l_exp,l_con,l_per,lg_total,ld_L,ld_N,ld_total,lr";

/// Network definitions plus the frozen backbone; everything that is not trained state.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: TrainConfig,
    pub encoder: Encoder<f32>,
    pub gens: Generators,
    pub d_l: Discriminator,
    pub d_n: Discriminator,
}

impl Model {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = if cfg.backbone == "random" {
            Encoder::random(cfg.backbone_seed, cfg.width_divisor)
        } else {
            Encoder::from_file(Path::new(&cfg.backbone))?
        };
        Ok(Model {
            gens: Generators::from_config(cfg, encoder.widths()),
            d_l: Discriminator::new("dl", cfg.width_divisor, cfg.mfpd),
            d_n: Discriminator::new("dn", cfg.width_divisor, cfg.mfpd),
            encoder,
            cfg: cfg.clone(),
        })
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            exp: self.cfg.lambda_exp,
            con: self.cfg.lambda_con,
            per: self.cfg.lambda_per,
        }
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Both generators (`gl.*`, `gn.*`).
    pub gen: ParamStore<f32>,
    /// Both discriminators (`dl.*`, `dn.*`).
    pub disc: ParamStore<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub sn: SpectralNorm,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub rng: Rng,
    pub sampler: SamplerState,
}

impl TrainState {
    pub fn init(model: &Model) -> Result<Self> {
        let cfg = &model.cfg;
        let mut gen = model.gens.init(cfg.seed);
        let mut disc = model.d_l.init(cfg.seed);
        disc.merge(model.d_n.init(cfg.seed));
        let mut sn = SpectralNorm::new();
        sn.project(&mut gen, cfg.seed, 1, cfg.sn_warmup_iters)?;
        sn.project(&mut disc, cfg.seed, 1, cfg.sn_warmup_iters)?;
        Ok(TrainState {
            gen,
            disc,
            opt_g: Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            opt_d: Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            sn,
            epoch: 0,
            step: 0,
            rng: Rng::new(cfg.seed),
            sampler: SamplerState::default(),
        })
    }
}

/// Values produced by one step besides the losses.
pub struct StepOutput {
    pub losses: LossBundle,
    /// First-hop fakes `(Ĩ_l, Ĩ_n)`.
    pub fakes: (ImageTensor, ImageTensor),
}

/// One generator update followed by one discriminator update on the detached fakes.
pub fn train_step(
    model: &Model,
    state: &mut TrainState,
    batch_n: &ImageTensor,
    batch_l: &ImageTensor,
    lr: f64,
) -> Result<StepOutput> {
    batch_n.require_network_input("train_step normal batch")?;
    batch_l.require_network_input("train_step low batch")?;
    if batch_n.shape() != batch_l.shape() {
        return Err(CiganError::Shape(format!(
            "normal batch {} vs low batch {}",
            batch_n.shape(),
            batch_l.shape()
        )));
    }
    let cfg = &model.cfg;
    let enc = &model.encoder;
    let mut bundle = LossBundle::default();

    // Generator phase: discriminators and backbone are read but not trained.
    let (fake_l, fake_n, gen_grads) = {
        let mut g = Graph::<f32>::new();
        let pg = Params::trainable(&state.gen);
        let pd = Params::frozen(&state.disc);
        let in_n = g.constant(batch_n.tensor().clone());
        let in_l = g.constant(batch_l.tensor().clone());
        let taps_n = enc.forward(&mut g, in_n, 5)?;
        let taps_l = enc.forward(&mut g, in_l, 5)?;

        // Forward cycle: normal → synthetic low → reconstructed normal.
        let fake_l = model.gens.degrade.degrade_graph(&mut g, pg, &taps_n, &taps_l, Some(&mut state.rng))?;
        let taps_fl = enc.forward(&mut g, fake_l, 5)?;
        let cyc_n = model.gens.enhance.enhance_graph(&mut g, pg, &taps_fl, fake_l)?;

        // Backward cycle: low → synthetic normal → reconstructed low, guided by the same I_l.
        let fake_n = model.gens.enhance.enhance_graph(&mut g, pg, &taps_l, in_l)?;
        let taps_fn = enc.forward(&mut g, fake_n, 5)?;
        let cyc_l = model.gens.degrade.degrade_graph(&mut g, pg, &taps_fn, &taps_l, Some(&mut state.rng))?;

        let s_fake_l = model.d_l.forward(&mut g, pd, fake_l)?;
        let s_real_l = model.d_l.forward(&mut g, pd, in_l)?;
        let s_fake_n = model.d_n.forward(&mut g, pd, fake_n)?;
        let s_real_n = model.d_n.forward(&mut g, pd, in_n)?;
        let adv_l = losses::rahinge_generator_loss(&mut g, &s_fake_l, &s_real_l)?;
        let adv_n = losses::rahinge_generator_loss(&mut g, &s_fake_n, &s_real_n)?;

        let (l_con, l_per) = losses::cycle_losses(
            &mut g,
            enc,
            &CycleInputs {
                in_n,
                cyc_n,
                in_l,
                cyc_l,
                phi_in_n: Some(taps_n[losses::PERCEPTUAL_DEPTH - 1]),
                phi_in_l: Some(taps_l[losses::PERCEPTUAL_DEPTH - 1]),
            },
        )?;
        let w = model.loss_weights();
        let mut terms: Vec<Var> = vec![adv_l, adv_n];
        if cfg.exp_loss {
            let l_exp = losses::exposure_loss(&mut g, fake_l, cfg.exp_e, cfg.exp_sigma, cfg.exp_window, cfg.exp_gray)?;
            bundle.l_exp = g.value(l_exp).item() as f64;
            terms.push(g.affine(l_exp, w.exp, 0.0));
        }
        terms.push(g.affine(l_con, w.con, 0.0));
        terms.push(g.affine(l_per, w.per, 0.0));
        let total = g.sum_all(&terms)?;

        bundle.lg_adv_l = g.value(adv_l).item() as f64;
        bundle.lg_adv_n = g.value(adv_n).item() as f64;
        bundle.l_con = g.value(l_con).item() as f64;
        bundle.l_per = g.value(l_per).item() as f64;
        bundle.lg_total = g.value(total).item() as f64;
        if !bundle.lg_total.is_finite() {
            return Err(CiganError::NonFinite {
                step: state.step + 1,
                last_checkpoint: None,
            });
        }
        let grads = g.backward(total)?;
        (g.value(fake_l).clone(), g.value(fake_n).clone(), grads)
    };
    state.opt_g.step(&mut state.gen, &gen_grads, lr)?;
    drop(gen_grads);
    state.sn.project(&mut state.gen, cfg.seed, 1, cfg.sn_warmup_iters)?;

    // Discriminator phase on detached fakes.
    let disc_grads = {
        let mut g = Graph::<f32>::new();
        let pd = Params::trainable(&state.disc);
        let real_l = g.constant(batch_l.tensor().clone());
        let real_n = g.constant(batch_n.tensor().clone());
        let fl = g.constant(fake_l.clone());
        let fnn = g.constant(fake_n.clone());
        let s_fake_l = model.d_l.forward(&mut g, pd, fl)?;
        let s_real_l = model.d_l.forward(&mut g, pd, real_l)?;
        let s_fake_n = model.d_n.forward(&mut g, pd, fnn)?;
        let s_real_n = model.d_n.forward(&mut g, pd, real_n)?;
        let ld_l = losses::rahinge_discriminator_loss(&mut g, &s_fake_l, &s_real_l)?;
        let ld_n = losses::rahinge_discriminator_loss(&mut g, &s_fake_n, &s_real_n)?;
        let total = g.add(ld_l, ld_n)?;
        bundle.ld_l = g.value(ld_l).item() as f64;
        bundle.ld_n = g.value(ld_n).item() as f64;
        bundle.ld_total = g.value(total).item() as f64;
        if !bundle.all_finite() {
            return Err(CiganError::NonFinite {
                step: state.step + 1,
                last_checkpoint: None,
            });
        }
        g.backward(total)?
    };
    state.opt_d.step(&mut state.disc, &disc_grads, lr)?;
    drop(disc_grads);
    state.sn.project(&mut state.disc, cfg.seed, 1, cfg.sn_warmup_iters)?;
    state.step += 1;

    Ok(StepOutput {
        losses: bundle,
        fakes: (ImageTensor::from_clamped(fake_l)?, ImageTensor::from_clamped(fake_n)?),
    })
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    epoch: usize,
    step: usize,
    config_hash: String,
    config: TrainConfig,
    rng: RngState,
    sampler: SamplerState,
    opt_g_t: u64,
    opt_d_t: u64,
}

/// Writes the complete training state.
pub fn save_checkpoint(path: &Path, model: &Model, state: &TrainState) -> Result<()> {
    let meta = Metadata {
        format_version: checkpoint::FORMAT_VERSION,
        epoch: state.epoch,
        step: state.step,
        config_hash: model.cfg.hash(),
        config: model.cfg.clone(),
        rng: state.rng.state(),
        sampler: state.sampler.clone(),
        opt_g_t: state.opt_g.t,
        opt_d_t: state.opt_d.t,
    };
    let mut a = Archive::new(serde_json::to_value(&meta).expect("metadata serializes"));
    for (name, p) in state.gen.iter().chain(state.disc.iter()) {
        a.insert_f32(format!("param.{name}"), (*p.value).clone());
    }
    state.opt_g.export(&mut a, "opt_g.");
    state.opt_d.export(&mut a, "opt_d.");
    state.sn.export(&mut a, "sn.");
    a.write(path)
}

/// Restores a checkpoint. Parameter names and kinds come from the stored configuration's
/// architecture, so missing or mis-shaped tensors are reported.
pub fn load_checkpoint(path: &Path) -> Result<(Model, TrainState)> {
    let a = checkpoint::read(path)?;
    let bad = |message: String| CiganError::Checkpoint {
        path: path.to_owned(),
        message,
    };
    let meta: Metadata = serde_json::from_value(a.metadata.clone()).map_err(|e| bad(format!("metadata: {e}")))?;
    let model = Model::new(&meta.config)?;
    let mut state = TrainState::init(&model)?;
    for store in [&mut state.gen, &mut state.disc] {
        let names: Vec<String> = store.names().map(str::to_owned).collect();
        for name in names {
            let t = a.tensor_f32(&format!("param.{name}")).map_err(|_| bad(format!("missing parameter {name}")))?;
            store.set(&name, t).map_err(|e| bad(e.to_string()))?;
        }
    }
    state.opt_g.import(&a, "opt_g.")?;
    state.opt_d.import(&a, "opt_d.")?;
    state.opt_g.t = meta.opt_g_t;
    state.opt_d.t = meta.opt_d_t;
    state.sn = SpectralNorm::import(&a, "sn.")?;
    state.epoch = meta.epoch;
    state.step = meta.step;
    state.rng = Rng::from_state(&meta.rng).ok_or_else(|| bad("invalid rng state".into()))?;
    state.sampler = meta.sampler;
    Ok((model, state))
}

pub fn format_loss_row(step: usize, epoch: usize, b: &LossBundle, lr: f64) -> String {
    let mut s = format!("{step},{epoch}");
    for v in b.values() {
        s.push_str(&format!(",{v}"));
    }
    s.push_str(&format!(",{lr}\n"));
    s
}

/// Files written by [`fit`].
pub struct FitPaths {
    pub losses_csv: PathBuf,
    pub checkpoint_dir: PathBuf,
}

impl FitPaths {
    pub fn new(out_dir: &Path) -> Self {
        FitPaths {
            losses_csv: out_dir.join("losses.csv"),
            checkpoint_dir: out_dir.join("checkpoints"),
        }
    }
}

/// Trains for `cfg.epochs` (or until `cfg.max_steps`), logging one CSV row per step and
/// writing a checkpoint after every epoch. With `resume`, continues from that checkpoint
/// and appends to the existing log. Returns the last checkpoint written.
pub fn fit(cfg: &TrainConfig, ds: &mut UnpairedDataset, out_dir: &Path, resume: Option<&Path>) -> Result<PathBuf> {
    let paths = FitPaths::new(out_dir);
    fs::create_dir_all(&paths.checkpoint_dir).map_err(|e| CiganError::io(&paths.checkpoint_dir, e))?;
    let (model, mut state) = match resume {
        Some(p) => {
            let (stored, state) = load_checkpoint(p)?;
            if stored.cfg.hash() != cfg.hash() {
                log::warn!("resuming {} with a configuration that differs from the stored one", p.display());
            }
            (Model::new(cfg)?, state)
        }
        None => {
            let model = Model::new(cfg)?;
            let state = TrainState::init(&model)?;
            (model, state)
        }
    };
    ds.crop_size = cfg.crop;
    ds.flip = cfg.flip;
    ds.set_sampler_state(state.sampler.clone())?;

    let mut log_file = if resume.is_some() && paths.losses_csv.exists() {
        OpenOptions::new().append(true).open(&paths.losses_csv)
    } else {
        fs::File::create(&paths.losses_csv).and_then(|mut f| writeln!(f, "{LOSS_HEADER}").map(|_| f))
    }
    .map_err(|e| CiganError::io(&paths.losses_csv, e))?;

    let spe = ds.steps_per_epoch(cfg.batch);
    let mut last: Option<PathBuf> = resume.map(Path::to_path_buf);
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let lr = lr_schedule(epoch, cfg)?;
        while state.step < epoch * spe {
            if cfg.max_steps.is_some_and(|m| state.step >= m) {
                break;
            }
            let (bn, bl) = ds.sample_batch(cfg.batch, &mut state.rng)?;
            state.sampler = ds.sampler_state().clone();
            let out = train_step(&model, &mut state, &bn, &bl, lr).map_err(|e| match e {
                CiganError::NonFinite { step, .. } => CiganError::NonFinite {
                    step,
                    last_checkpoint: last.clone(),
                },
                other => other,
            })?;
            log_file
                .write_all(format_loss_row(state.step, epoch, &out.losses, lr).as_bytes())
                .map_err(|e| CiganError::io(&paths.losses_csv, e))?;
            log::debug!("step {} lg_total {:.4} ld_total {:.4}", state.step, out.losses.lg_total, out.losses.ld_total);
        }
        if state.step == epoch * spe {
            state.epoch = epoch;
            let p = paths.checkpoint_dir.join(format!("epoch_{epoch:04}.ckpt"));
            save_checkpoint(&p, &model, &state)?;
            log::info!("epoch {epoch} done, checkpoint {}", p.display());
            last = Some(p);
        }
        if cfg.max_steps.is_some_and(|m| state.step >= m) {
            if state.step != state.epoch * spe {
                let p = paths.checkpoint_dir.join(format!("step_{:06}.ckpt", state.step));
                save_checkpoint(&p, &model, &state)?;
                last = Some(p);
            }
            break;
        }
    }
    log_file.flush().map_err(|e| CiganError::io(&paths.losses_csv, e))?;
    last.ok_or_else(|| CiganError::Invalid("training finished without writing a checkpoint".into()))
}
