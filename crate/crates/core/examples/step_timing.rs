//! Times a few training steps on synthetic data.
//!
//! `cargo run --release -p cigan-core --example step_timing -- [width_divisor] [crop] [batch]`

use std::time::Instant;

use cigan_core::data::UnpairedDataset;
use cigan_core::synthetic::unpaired_images;
use cigan_core::training::{train_step, Model, TrainState};
use cigan_core::TrainConfig;

fn main() -> cigan_core::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cfg = TrainConfig {
        width_divisor: args.first().copied().unwrap_or(8),
        crop: args.get(1).copied().unwrap_or(96),
        batch: args.get(2).copied().unwrap_or(4),
        ..TrainConfig::default()
    };
    let (n, l) = unpaired_images(8, 8, cfg.crop + 8, cfg.crop + 8, 1);
    let mut ds = UnpairedDataset::from_images(n, l, cfg.crop)?;
    let model = Model::new(&cfg)?;
    let mut state = TrainState::init(&model)?;
    println!(
        "generator params {}, discriminator params {}",
        state.gen.numel(),
        state.disc.numel()
    );
    for i in 0..4 {
        let (bn, bl) = ds.sample_batch(cfg.batch, &mut state.rng)?;
        let t = Instant::now();
        let out = train_step(&model, &mut state, &bn, &bl, cfg.lr)?;
        println!("step {i}: {:.2}s lg_total {:.4} ld_total {:.4}", t.elapsed().as_secs_f64(), out.losses.lg_total, out.losses.ld_total);
    }
    Ok(())
}
