//! Short training run on synthetic data, printing the generator loss trace.
//!
//! `cargo run --release -p cigan-core --example desk_run -- [width_divisor] [lr] [steps] [seed]`

use std::time::Instant;

use cigan_core::data::UnpairedDataset;
use cigan_core::generators::{degrade, enhance};
use cigan_core::imaging::mean_luminance;
use cigan_core::synthetic::unpaired_images;
use cigan_core::training::{train_step, Model, TrainState};
use cigan_core::TrainConfig;

fn main() -> cigan_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(d);
    let cfg = TrainConfig {
        width_divisor: arg(0, 8.0) as usize,
        lr: arg(1, 1e-4),
        crop: 96,
        batch: 4,
        seed: arg(3, 0.0) as u64,
        ..TrainConfig::default()
    };
    let steps = arg(2, 300.0) as usize;
    let (n, l) = unpaired_images(32, 32, 112, 112, cfg.seed);
    let mut ds = UnpairedDataset::from_images(n.clone(), l.clone(), cfg.crop)?;
    let model = Model::new(&cfg)?;
    let mut state = TrainState::init(&model)?;
    let t = Instant::now();
    let mut trace = Vec::with_capacity(steps);
    for i in 0..steps {
        let (bn, bl) = ds.sample_batch(cfg.batch, &mut state.rng)?;
        let out = train_step(&model, &mut state, &bn, &bl, cfg.lr)?;
        trace.push(out.losses.lg_total);
        if i % 25 == 0 || i + 1 == steps {
            let l = out.losses;
            println!(
                "{i:4} {:6.1}s lg {:.3} adv {:.3}/{:.3} exp {:.3} con {:.3} per {:.3} ld {:.3}",
                t.elapsed().as_secs_f64(),
                l.lg_total, l.lg_adv_l, l.lg_adv_n, l.l_exp, l.l_con, l.l_per, l.ld_total
            );
        }
    }
    let head: f64 = trace[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = trace[steps - 10..].iter().sum::<f64>() / 10.0;
    println!("start {head:.4} end {tail:.4} decrease {:.1}%", 100.0 * (1.0 - tail / head));

    let mut rng = cigan_core::Rng::new(cfg.seed);
    let (mut low_in, mut low_out, mut n_in, mut n_out) = (0.0, 0.0, 0.0, 0.0);
    for (i, img) in l.iter().enumerate() {
        low_in += mean_luminance(img);
        low_out += mean_luminance(&enhance(&model.gens.enhance, &model.encoder, &state.gen, img)?);
        let normal = &n[i % n.len()];
        n_in += mean_luminance(normal);
        let d = degrade(&model.gens.degrade, &model.encoder, &state.gen, normal, img, &mut rng, true)?;
        n_out += mean_luminance(&d);
    }
    let k = l.len() as f64;
    println!(
        "low {:.4} -> enhanced {:.4}; normal {:.4} -> degraded {:.4}",
        low_in / k, low_out / k, n_in / k, n_out / k
    );
    Ok(())
}
