use std::path::Path;

use cigan_core::config::VARIANTS;
use cigan_core::{RunConfig, TrainConfig};
use proptest::prelude::*;

#[test]
fn each_variant_turns_off_its_switch() {
    for v in VARIANTS {
        let mut c = TrainConfig::default();
        c.disable(v).unwrap();
        let off = [c.lgt, c.frp, c.dam, c.mfpd, c.lip, c.exp_loss].iter().filter(|b| !**b).count();
        assert_eq!(off, if v == "all" { 3 } else { 1 }, "{v}");
    }
    assert!(TrainConfig::default().disable("vgg").is_err());
}

#[test]
fn paths_resolve_against_the_run_file() {
    let rc = RunConfig::parse("normal_dir = \"data/n\"\nlow_dir = \"/abs/l\"\nepochs = 3\n", Path::new("/runs")).unwrap();
    assert_eq!(rc.paths.normal_dir.as_deref(), Some(Path::new("/runs/data/n")));
    assert_eq!(rc.paths.low_dir.as_deref(), Some(Path::new("/abs/l")));
    assert_eq!(rc.train.epochs, 3);
}

#[test]
fn invalid_values_are_rejected() {
    for text in ["batch = 0", "crop = 16", "lip_lambda = 0.5", "adam_beta2 = 1.0", "epochs = \"ten\"", "seed = 18446744073709551615"] {
        assert!(RunConfig::parse(text, Path::new(".")).is_err(), "{text}");
    }
}

proptest! {
    #[test]
    fn snapshot_round_trips(epochs in 1usize..500, batch in 1usize..64, lr in 0.0f64..1.0, seed in 0..=i64::MAX as u64,
                            lgt in any::<bool>(), frp in any::<bool>()) {
        let rc = RunConfig {
            train: TrainConfig { epochs, batch, lr, seed, lgt, frp, ..TrainConfig::default() },
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&rc.to_toml(), Path::new(".")).unwrap();
        prop_assert_eq!(&back, &rc);
        prop_assert_eq!(back.train.hash(), rc.train.hash());
    }
}
