#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cigan_core::imaging::{load_image, mean_luminance};
use cigan_core::synthetic::write_unpaired_set;

/// Settings small enough for a run to take about a second.
pub const TINY: &str = "width_divisor = 16\ncrop = 32\nbatch = 2\nepochs = 1\nsn_warmup_iters = 20\n";

/// Writes `normal/` and `low/` under `root` plus a run file naming them; `extra` lines are
/// appended to the tiny settings.
pub fn tiny_run(root: &Path, extra: &str) -> PathBuf {
    write_unpaired_set(root, 4, 4, 40, 40, 5).unwrap();
    let config = root.join("run.toml");
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_owned();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let base: String = TINY.lines().filter(|l| !overridden.contains(&key(l))).map(|l| format!("{l}\n")).collect();
    std::fs::write(&config, format!("normal_dir = \"normal\"\nlow_dir = \"low\"\n{base}{extra}")).unwrap();
    config
}

pub fn cigan(args: &[&str]) -> Output {
    cigan_env(args, &[])
}

pub fn cigan_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cigan"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("CIGAN_OUTPUT_ROOT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Newest checkpoint under a run directory: `epoch_*` names sort by epoch and the
/// `step_*` file of an early stop comes last.
pub fn last_checkpoint(run: &Path) -> PathBuf {
    sorted_files(&run.join("checkpoints"), "ckpt").pop().expect("a checkpoint")
}

pub fn sorted_files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

/// Mean gray luminance over every PNG of a directory.
pub fn dir_luminance(dir: &Path) -> f64 {
    let files = sorted_files(dir, "png");
    assert!(!files.is_empty(), "no images in {}", dir.display());
    files.iter().map(|p| mean_luminance(&load_image(p).unwrap())).sum::<f64>() / files.len() as f64
}
