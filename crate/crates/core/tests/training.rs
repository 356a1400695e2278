mod common;

use cigan_core::autograd::Tensor;
use cigan_core::data::UnpairedDataset;
use cigan_core::generators::degrade;
use cigan_core::imaging::ImageTensor;
use cigan_core::nn::ParamKind;
use cigan_core::synthetic::unpaired_images;
use cigan_core::training::{fit, load_checkpoint, save_checkpoint, train_step, FitPaths, Model, TrainState};
use cigan_core::{lr_schedule, CiganError, Rng, TrainConfig};

fn tiny() -> TrainConfig {
    TrainConfig {
        width_divisor: 16,
        crop: 32,
        batch: 2,
        epochs: 2,
        sn_warmup_iters: 20,
        ..TrainConfig::default()
    }
}

fn batches(cfg: &TrainConfig, seed: u64) -> (ImageTensor, ImageTensor) {
    let (n, l) = unpaired_images(4, 4, 40, 40, seed);
    let mut ds = UnpairedDataset::from_images(n, l, cfg.crop).unwrap();
    ds.sample_batch(cfg.batch, &mut Rng::new(seed)).unwrap()
}

fn dataset(cfg: &TrainConfig) -> UnpairedDataset {
    let (n, l) = unpaired_images(4, 4, 40, 40, 3);
    UnpairedDataset::from_images(n, l, cfg.crop).unwrap()
}

#[test]
fn untrained_discriminators_give_ld_total_four() {
    let cfg = tiny();
    let model = Model::new(&cfg).unwrap();
    let mut state = TrainState::init(&model).unwrap();
    let (bn, bl) = batches(&cfg, 1);
    let out = train_step(&model, &mut state, &bn, &bl, cfg.lr).unwrap();
    assert_eq!(out.losses.ld_l, 2.0);
    assert_eq!(out.losses.ld_n, 2.0);
    assert_eq!(out.losses.ld_total, 4.0);
    assert_eq!(out.losses.lg_adv_l, 2.0);
    assert!(out.losses.all_finite());
    assert_eq!(state.step, 1);
}

#[test]
fn step_is_deterministic() {
    let cfg = tiny();
    let run = || {
        let model = Model::new(&cfg).unwrap();
        let mut state = TrainState::init(&model).unwrap();
        let (bn, bl) = batches(&cfg, 2);
        let a = train_step(&model, &mut state, &bn, &bl, cfg.lr).unwrap().losses;
        let b = train_step(&model, &mut state, &bn, &bl, cfg.lr).unwrap().losses;
        (a, b, state.gen)
    };
    let (a1, b1, g1) = run();
    let (a2, b2, g2) = run();
    assert_eq!((a1, b1), (a2, b2));
    for (name, p) in g1.iter() {
        assert_eq!(p.value, g2.get(name).unwrap().value);
    }
}

#[test]
fn disabled_blocks_contribute_nothing() {
    let full = TrainConfig { lambda_exp: 0.0, ..tiny() };
    let mut off = tiny();
    off.disable("all").unwrap();
    assert!(!off.lgt && !off.frp && !off.exp_loss);

    let m_off = Model::new(&off).unwrap();
    let mut s_off = TrainState::init(&m_off).unwrap();
    assert!(!s_off.gen.names().any(|n| n.contains("lgt") || n.contains("frp")));

    let m_full = Model::new(&full).unwrap();
    let mut s_full = TrainState::init(&m_full).unwrap();
    // Neutralize the blocks in the full model: identity LGT and zero FRP gains.
    let names: Vec<String> = s_full.gen.names().map(String::from).collect();
    for n in &names {
        let shape = s_full.gen.value(n).unwrap().shape();
        let v = if n.contains(".lgt") && n.ends_with(".weight") && !n.contains(".shared.") {
            Some(0.0)
        } else if n.contains(".lgt") && n.ends_with(".w.bias") {
            Some(1.0)
        } else if n.contains(".lgt") && n.ends_with(".b.bias") {
            Some(0.0)
        } else {
            None
        };
        if let Some(v) = v {
            s_full.gen.set(n, Tensor::full(shape, v)).unwrap();
        }
    }
    let (bn, bl) = batches(&full, 4);
    let a = train_step(&m_full, &mut s_full, &bn, &bl, full.lr).unwrap();
    let b = train_step(&m_off, &mut s_off, &bn, &bl, off.lr).unwrap();
    assert_eq!(b.losses.l_exp, 0.0);
    let mut la = a.losses;
    la.l_exp = 0.0;
    for (x, y) in la.values().iter().zip(b.losses.values()) {
        assert!((x - y).abs() <= 1e-6, "{:?} vs {:?}", la, b.losses);
    }
    assert_eq!(a.fakes, b.fakes);
    let w = m_off.loss_weights();
    let l = b.losses;
    let expected = l.lg_adv_l + l.lg_adv_n + w.con * l.l_con + w.per * l.l_per;
    assert!((l.lg_total - expected).abs() < 1e-5);
}

#[test]
fn constrained_weights_stay_normalized_and_backbone_frozen() {
    let cfg = tiny();
    let model = Model::new(&cfg).unwrap();
    let backbone = model.encoder.params().clone();
    let mut state = TrainState::init(&model).unwrap();
    for seed in 0..2 {
        let (bn, bl) = batches(&cfg, seed);
        train_step(&model, &mut state, &bn, &bl, 1e-3).unwrap();
        for (name, p) in state.gen.iter().chain(state.disc.iter()) {
            if p.kind == ParamKind::ConvWeight {
                let s = common::top_singular_value(p.value.as_ref());
                assert!(s <= 1.05, "{name}: sigma {s}");
            }
        }
    }
    for (name, p) in model.encoder.params().iter() {
        assert_eq!(p.value, backbone.get(name).unwrap().value);
    }
}

#[test]
fn checkpoint_round_trip_reproduces_next_step() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(&cfg).unwrap();
    let mut state = TrainState::init(&model).unwrap();
    let (bn, bl) = batches(&cfg, 5);
    train_step(&model, &mut state, &bn, &bl, cfg.lr).unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&path, &model, &state).unwrap();
    let (model2, mut state2) = load_checkpoint(&path).unwrap();
    for (name, p) in state.gen.iter().chain(state.disc.iter()) {
        let q = state2.gen.get(name).or_else(|| state2.disc.get(name)).unwrap();
        assert_eq!(p.value, q.value, "{name}");
    }
    assert_eq!(state2.sn, state.sn);
    assert_eq!(state2.step, 1);

    let (bn, bl) = batches(&cfg, 6);
    let a = train_step(&model, &mut state, &bn, &bl, cfg.lr).unwrap().losses;
    let b = train_step(&model2, &mut state2, &bn, &bl, cfg.lr).unwrap().losses;
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 1e-6);
    }

    let bytes = std::fs::read(&path).unwrap();
    save_checkpoint(&dir.path().join("t.ckpt"), &model2, &{
        let (_, s) = load_checkpoint(&path).unwrap();
        s
    })
    .unwrap();
    assert_eq!(bytes, std::fs::read(dir.path().join("t.ckpt")).unwrap());
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ckpt");
    std::fs::write(&p, b"CIGANCKPgarbage").unwrap();
    let err = load_checkpoint(&p).unwrap_err();
    assert!(err.to_string().contains("bad.ckpt"), "{err}");
}

#[test]
fn one_epoch_bookkeeping() {
    let cfg = TrainConfig { epochs: 1, ..tiny() };
    let dir = tempfile::tempdir().unwrap();
    let mut ds = dataset(&cfg);
    let last = fit(&cfg, &mut ds, dir.path(), None).unwrap();
    let paths = FitPaths::new(dir.path());
    let ckpts: Vec<_> = std::fs::read_dir(&paths.checkpoint_dir).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    assert!(last.ends_with("epoch_0001.ckpt"));
    let csv = std::fs::read_to_string(&paths.losses_csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + ds.steps_per_epoch(cfg.batch));
    assert!(csv.lines().skip(1).all(|l| l.split(',').all(|v| v.parse::<f64>().unwrap().is_finite())));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = tiny();
    let whole = tempfile::tempdir().unwrap();
    fit(&cfg, &mut dataset(&cfg), whole.path(), None).unwrap();

    let parts = tempfile::tempdir().unwrap();
    let spe = dataset(&cfg).steps_per_epoch(cfg.batch);
    let first = TrainConfig { max_steps: Some(spe), ..cfg.clone() };
    let ckpt = fit(&first, &mut dataset(&cfg), parts.path(), None).unwrap();
    assert!(ckpt.ends_with("epoch_0001.ckpt"));
    fit(&cfg, &mut dataset(&cfg), parts.path(), Some(&ckpt)).unwrap();

    let a = std::fs::read(FitPaths::new(whole.path()).losses_csv).unwrap();
    let b = std::fs::read(FitPaths::new(parts.path()).losses_csv).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reference_matters_after_a_step() {
    let cfg = tiny();
    let model = Model::new(&cfg).unwrap();
    let mut state = TrainState::init(&model).unwrap();
    let (bn, bl) = batches(&cfg, 7);
    train_step(&model, &mut state, &bn, &bl, 1e-3).unwrap();
    let normal = bn.item(0).unwrap();
    let (r1, r2) = (bl.item(0).unwrap(), bl.item(1).unwrap());
    let run = |r: &ImageTensor| {
        degrade(&model.gens.degrade, &model.encoder, &state.gen, &normal, r, &mut Rng::new(0), true).unwrap()
    };
    let (a, b) = (run(&r1), run(&r2));
    let differing = a
        .tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .filter(|(x, y)| (*x - *y).abs() > 1e-4)
        .count();
    assert!(differing * 100 >= a.tensor().numel(), "only {differing} pixels differ");
}

#[test]
fn non_finite_loss_aborts_the_step() {
    let cfg = tiny();
    let model = Model::new(&cfg).unwrap();
    let mut state = TrainState::init(&model).unwrap();
    let name = "gn.head.bias";
    let shape = state.gen.value(name).unwrap().shape();
    state.gen.set(name, Tensor::full(shape, f32::NAN)).unwrap();
    let (bn, bl) = batches(&cfg, 8);
    match train_step(&model, &mut state, &bn, &bl, cfg.lr) {
        Err(CiganError::NonFinite { step: 1, .. }) => {}
        other => panic!("expected a non-finite error, got {:?}", other.map(|o| o.losses)),
    }
}

#[test]
fn schedule_values() {
    let cfg = TrainConfig::default();
    for (epoch, lr) in [(1, 1e-4), (25, 1e-4), (50, 1e-4), (51, 0.98e-4), (75, 5e-5), (100, 0.0)] {
        assert!((lr_schedule(epoch, &cfg).unwrap() - lr).abs() < 1e-15, "epoch {epoch}");
    }
    assert!(lr_schedule(0, &cfg).is_err());
    assert!(lr_schedule(101, &cfg).is_err());
}
