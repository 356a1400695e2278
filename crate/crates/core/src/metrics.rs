//! Full-reference quality metrics: PSNR, SSIM and their gamma-corrected variants.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cigan_autograd::Real;
use serde::Serialize;

use crate::error::{CiganError, Result};
use crate::imaging::{self, ImageTensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CiganError::Shape(format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` over every channel and pixel; identical inputs give `+∞`.
pub fn psnr<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    check_same(a, b)?;
    let (x, y) = (a.tensor().data(), b.tensor().data());
    let mse = x
        .iter()
        .zip(y)
        .map(|(&p, &q)| {
            let d = p.as_f64() - q.as_f64();
            d * d
        })
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..n).map(|i| k[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..n).map(|i| k[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

fn gray_planes<T: Real>(img: &ImageTensor<T>) -> Result<Vec<Vec<f64>>> {
    let g = if img.shape().channels() == 3 {
        imaging::to_grayscale(img)?
    } else {
        img.clone()
    };
    let [b, _, h, w] = g.shape().dims();
    let d = g.tensor().data();
    Ok((0..b)
        .map(|i| d[i * h * w..(i + 1) * h * w].iter().map(|v| v.as_f64()).collect())
        .collect())
}

/// Single-scale SSIM of the gray reductions with an 11×11 Gaussian window (σ = 1.5),
/// averaged over all valid window positions (and over the batch).
pub fn ssim<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    check_same(a, b)?;
    let [_, _, h, w] = a.shape().dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CiganError::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let (pa, pb) = (gray_planes(a)?, gray_planes(b)?);
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, h, w, &k);
        let my = filter_valid(y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / pa.len() as f64)
}

/// `min, min+step, …, ≤ max`, rounded to 1e-9, with 1 inserted if the steps miss it.
pub fn gamma_grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let g = ((min + k as f64 * step) * 1e9).round() / 1e9;
        if g > max + 1e-9 {
            break;
        }
        out.push(g);
        k += 1;
    }
    if !out.contains(&1.0) {
        out.push(1.0);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    out
}

pub fn default_gamma_grid() -> Vec<f64> {
    gamma_grid(0.1, 5.0, 0.05)
}

pub fn apply_gamma<T: Real>(img: &ImageTensor<T>, gamma: f64) -> ImageTensor<T> {
    let g = T::from_f64_lossy(gamma);
    ImageTensor::from_clamped(img.tensor().map(|v| v.powf(g))).expect("gamma keeps [0,1]")
}

/// γ from `grid` maximizing `psnr(pred^γ, ref)`; ties go to the γ nearest 1.
pub fn gamma_correct_best<T: Real>(
    pred: &ImageTensor<T>,
    reference: &ImageTensor<T>,
    grid: &[f64],
) -> Result<(f64, ImageTensor<T>)> {
    check_same(pred, reference)?;
    let mut best: Option<(f64, f64, ImageTensor<T>)> = None;
    for &gamma in grid {
        let c = apply_gamma(pred, gamma);
        let p = psnr(&c, reference)?;
        let better = match &best {
            None => true,
            Some((bg, bp, _)) => p > *bp || (p == *bp && (gamma - 1.0).abs() < (bg - 1.0).abs()),
        };
        if better {
            best = Some((gamma, p, c));
        }
    }
    let (gamma, _, corrected) = best.ok_or_else(|| CiganError::Invalid("empty gamma grid".into()))?;
    Ok((gamma, corrected))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub psnr_gc: f64,
    pub ssim: f64,
    pub ssim_gc: f64,
    pub gamma: f64,
}

pub fn evaluate_pair<T: Real>(name: &str, pred: &ImageTensor<T>, gt: &ImageTensor<T>, grid: &[f64]) -> Result<MetricRow> {
    let (gamma, corrected) = gamma_correct_best(pred, gt, grid)?;
    Ok(MetricRow {
        name: name.to_owned(),
        psnr: psnr(pred, gt)?,
        psnr_gc: psnr(&corrected, gt)?,
        ssim: ssim(pred, gt)?,
        ssim_gc: ssim(&corrected, gt)?,
        gamma,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

impl MetricReport {
    pub fn from_rows(mut rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(CiganError::Data("no images to evaluate".into()));
        }
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean = MetricRow {
            name: "MEAN".into(),
            psnr: avg(|r| r.psnr),
            psnr_gc: avg(|r| r.psnr_gc),
            ssim: avg(|r| r.ssim),
            ssim_gc: avg(|r| r.ssim_gc),
            gamma: avg(|r| r.gamma),
        };
        Ok(MetricReport { rows, mean })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.serialize(r).map_err(|e| CiganError::Invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CiganError::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| CiganError::io(path, e))
    }
}

fn by_file_name(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(crate::data::list_images(dir)?
        .into_iter()
        .filter_map(|p| Some((p.file_name()?.to_string_lossy().into_owned(), p)))
        .collect())
}

/// Scores every image of `pred_dir` against the same-named image of `gt_dir`.
pub fn evaluate_dir(pred_dir: &Path, gt_dir: &Path, grid: &[f64]) -> Result<MetricReport> {
    let preds = by_file_name(pred_dir)?;
    let gts = by_file_name(gt_dir)?;
    let mut rows = Vec::with_capacity(preds.len());
    for (name, pred_path) in &preds {
        let gt_path = gts.get(name).ok_or_else(|| {
            CiganError::Data(format!("{} has no counterpart in {}", pred_path.display(), gt_dir.display()))
        })?;
        let pred = imaging::load_image(pred_path)?.cast::<f64>();
        let gt = imaging::load_image(gt_path)?.cast::<f64>();
        let (pred, gt) = if pred.shape().channels() != gt.shape().channels() {
            (imaging::to_rgb(&pred), imaging::to_rgb(&gt))
        } else {
            (pred, gt)
        };
        if pred.shape() != gt.shape() {
            return Err(CiganError::Shape(format!(
                "{name}: prediction {} vs ground truth {}",
                pred.shape(),
                gt.shape()
            )));
        }
        rows.push(evaluate_pair(name, &pred, &gt, grid)?);
    }
    MetricReport::from_rows(rows)
}
