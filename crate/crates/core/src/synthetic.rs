//! Procedural scenes for smoke tests and small training runs.
//!
//! A scene is a smooth two-color gradient with a few flat-colored rectangles and discs and
//! a faint sinusoidal texture. Low-light versions are darkened by a random gain and
//! carry additive Gaussian noise.

use std::path::{Path, PathBuf};

use cigan_autograd::{Shape, Tensor};

use crate::error::{CiganError, Result};
use crate::imaging::{save_image, ImageTensor};
use crate::rng::Rng;

fn color(rng: &mut Rng, lo: f64, hi: f64) -> [f64; 3] {
    [0, 1, 2].map(|_| lo + (hi - lo) * rng.uniform())
}

/// Well-exposed scene with mean intensity roughly in 0.4–0.65.
pub fn normal_scene(h: usize, w: usize, rng: &mut Rng) -> ImageTensor {
    let mut px = scene(h, w, rng, 0.35, 0.85);
    px.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    to_image(h, w, px)
}

/// Dark, noisy scene: a fresh scene scaled by a gain in 0.06–0.2 plus noise.
pub fn low_scene(h: usize, w: usize, rng: &mut Rng) -> ImageTensor {
    let gain = 0.06 + 0.14 * rng.uniform();
    let noise = 0.005 + 0.02 * rng.uniform();
    let mut px = scene(h, w, rng, 0.35, 0.85);
    for v in px.iter_mut() {
        *v = (*v * gain + noise * rng.normal()).clamp(0.0, 1.0);
    }
    to_image(h, w, px)
}

/// Planar RGB values before clamping.
fn scene(h: usize, w: usize, rng: &mut Rng, lo: f64, hi: f64) -> Vec<f64> {
    let c0 = color(rng, lo, hi);
    let c1 = color(rng, lo, hi);
    let angle = rng.uniform() * std::f64::consts::TAU;
    let (dx, dy) = (angle.cos(), angle.sin());
    let freq = 0.2 + 0.6 * rng.uniform();
    let amp = 0.03 + 0.05 * rng.uniform();
    let mut px = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let t = (0.5 + (u - 0.5) * dx + (v - 0.5) * dy).clamp(0.0, 1.0);
            let tex = amp * ((x as f64 * freq).sin() * (y as f64 * freq * 0.7).cos());
            for c in 0..3 {
                px[(c * h + y) * w + x] = c0[c] * (1.0 - t) + c1[c] * t + tex;
            }
        }
    }
    let shapes = 2 + rng.below(4);
    for _ in 0..shapes {
        let col = color(rng, 0.05, 1.0);
        let cy = rng.uniform() * h as f64;
        let cx = rng.uniform() * w as f64;
        let r = (0.08 + 0.2 * rng.uniform()) * h.min(w) as f64;
        let disc = rng.uniform() < 0.5;
        for y in 0..h {
            for x in 0..w {
                let (ey, ex) = (y as f64 - cy, x as f64 - cx);
                let inside = if disc {
                    ey * ey + ex * ex <= r * r
                } else {
                    ey.abs() <= r && ex.abs() <= r * 0.7
                };
                if inside {
                    for c in 0..3 {
                        px[(c * h + y) * w + x] = col[c];
                    }
                }
            }
        }
    }
    px
}

fn to_image(h: usize, w: usize, px: Vec<f64>) -> ImageTensor {
    let data = px.into_iter().map(|v| v as f32).collect();
    ImageTensor::new(Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("sized")).expect("clamped")
}

/// In-memory unpaired set: `n_normal` and `n_low` independent scenes.
pub fn unpaired_images(n_normal: usize, n_low: usize, h: usize, w: usize, seed: u64) -> (Vec<ImageTensor>, Vec<ImageTensor>) {
    let mut rn = Rng::with_stream(seed, 11);
    let mut rl = Rng::with_stream(seed, 12);
    let normal = (0..n_normal).map(|_| normal_scene(h, w, &mut rn)).collect();
    let low = (0..n_low).map(|_| low_scene(h, w, &mut rl)).collect();
    (normal, low)
}

/// Writes `normal/` and `low/` PNG directories under `root` and returns their paths.
pub fn write_unpaired_set(
    root: &Path,
    n_normal: usize,
    n_low: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    let (normal, low) = unpaired_images(n_normal, n_low, h, w, seed);
    let nd = root.join("normal");
    let ld = root.join("low");
    for (dir, imgs) in [(&nd, &normal), (&ld, &low)] {
        std::fs::create_dir_all(dir).map_err(|e| CiganError::io(dir, e))?;
        for (i, img) in imgs.iter().enumerate() {
            save_image(img, &dir.join(format!("{i:04}.png")))?;
        }
    }
    Ok((nd, ld))
}
