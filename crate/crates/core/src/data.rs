//! Unpaired normal/low-light image collections and epoch-based batch sampling.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use cigan_autograd::{Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CiganError, Result};
use crate::imaging::{self, ImageTensor};
use crate::rng::Rng;

/// 8-bit RGB image kept in memory between epochs, planar layout.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl RawImage {
    pub fn load(path: &Path) -> Result<Self> {
        let img = imaging::to_rgb(&imaging::load_image(path)?);
        Ok(Self::from_image(&img))
    }

    pub fn from_image(img: &ImageTensor) -> Self {
        let [_, _, h, w] = img.shape().dims();
        let data = img.tensor().data()[..3 * h * w]
            .iter()
            .map(|&v| imaging::quantize(v as f64))
            .collect();
        RawImage {
            height: h,
            width: w,
            data,
        }
    }

    /// `size×size` window as a `[1, 3, size, size]` image, optionally mirrored.
    fn crop(&self, top: usize, left: usize, size: usize, flip: bool) -> ImageTensor {
        let (h, w) = (self.height, self.width);
        let t = Tensor::from_fn(Shape::new(1, 3, size, size), |[_, c, y, x]| {
            let sx = if flip { size - 1 - x } else { x };
            self.data[(c * h + top + y) * w + left + sx] as f32 / 255.0
        });
        ImageTensor::new(t).expect("8-bit codes are in range")
    }
}

/// Where the sampler is within the current epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub order: Vec<usize>,
    pub cursor: usize,
}

#[derive(Clone, Debug)]
pub struct UnpairedDataset {
    pub normal_paths: Vec<PathBuf>,
    pub low_paths: Vec<PathBuf>,
    pub crop_size: usize,
    pub flip: bool,
    normal: Vec<RawImage>,
    low: Vec<RawImage>,
    sampler: SamplerState,
}

/// Image files of a directory sorted by name, or the lines of a manifest file. Relative
/// manifest entries resolve against the manifest's directory.
pub fn list_images(source: &Path) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(source).map_err(|e| CiganError::io(source, e))?;
    let mut paths = if meta.is_dir() {
        let mut v = Vec::new();
        for entry in fs::read_dir(source).map_err(|e| CiganError::io(source, e))? {
            let p = entry.map_err(|e| CiganError::io(source, e))?.path();
            if p.is_file() && imaging::is_image_path(&p) {
                v.push(p);
            }
        }
        v
    } else {
        let text = fs::read_to_string(source).map_err(|e| CiganError::io(source, e))?;
        let base = source.parent().unwrap_or(Path::new("."));
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| base.join(l))
            .collect()
    };
    paths.sort();
    Ok(paths)
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<RawImage>> {
    paths.iter().map(|p| RawImage::load(p)).collect()
}

impl UnpairedDataset {
    /// Lists, checks and decodes both partitions. Fails when either is empty or when a file
    /// appears in both (compared by canonical path).
    pub fn build(normal: &Path, low: &Path, crop: usize) -> Result<Self> {
        let normal_paths = list_images(normal)?;
        let low_paths = list_images(low)?;
        for (paths, src) in [(&normal_paths, normal), (&low_paths, low)] {
            if paths.is_empty() {
                return Err(CiganError::Data(format!("no images in {}", src.display())));
            }
        }
        let mut seen = HashMap::new();
        for p in &normal_paths {
            let c = fs::canonicalize(p).map_err(|e| CiganError::io(p, e))?;
            seen.insert(c, p.clone());
        }
        for p in &low_paths {
            let c = fs::canonicalize(p).map_err(|e| CiganError::io(p, e))?;
            if let Some(other) = seen.get(&c) {
                return Err(CiganError::Data(format!(
                    "{} and {} are the same file; partitions must not intersect",
                    other.display(),
                    p.display()
                )));
            }
        }
        Ok(UnpairedDataset {
            normal: load_all(&normal_paths)?,
            low: load_all(&low_paths)?,
            normal_paths,
            low_paths,
            crop_size: crop,
            flip: false,
            sampler: SamplerState::default(),
        })
    }

    /// In-memory dataset; paths are synthetic labels.
    pub fn from_images(normal: Vec<ImageTensor>, low: Vec<ImageTensor>, crop: usize) -> Result<Self> {
        if normal.is_empty() || low.is_empty() {
            return Err(CiganError::Data("both partitions need at least one image".into()));
        }
        let label = |kind: &str, n: usize| (0..n).map(|i| PathBuf::from(format!("<{kind}{i}>"))).collect();
        Ok(UnpairedDataset {
            normal_paths: label("normal", normal.len()),
            low_paths: label("low", low.len()),
            normal: normal.iter().map(|i| RawImage::from_image(&imaging::to_rgb(i))).collect(),
            low: low.iter().map(|i| RawImage::from_image(&imaging::to_rgb(i))).collect(),
            crop_size: crop,
            flip: false,
            sampler: SamplerState::default(),
        })
    }

    /// Whether the normal partition drives epochs (it wins ties).
    fn normal_major(&self) -> bool {
        self.normal.len() >= self.low.len()
    }

    pub fn epoch_len(&self) -> usize {
        self.normal.len().max(self.low.len())
    }

    pub fn steps_per_epoch(&self, batch: usize) -> usize {
        self.epoch_len().div_ceil(batch.max(1))
    }

    pub fn sampler_state(&self) -> &SamplerState {
        &self.sampler
    }

    pub fn set_sampler_state(&mut self, s: SamplerState) -> Result<()> {
        if !s.order.is_empty() && (s.order.len() != self.epoch_len() || s.cursor > s.order.len()) {
            return Err(CiganError::Data("sampler state does not match this dataset".into()));
        }
        self.sampler = s;
        Ok(())
    }

    pub fn normal_images(&self) -> &[RawImage] {
        &self.normal
    }

    pub fn low_images(&self) -> &[RawImage] {
        &self.low
    }

    /// Next `(normal_index, low_index)` pairs without cropping. The larger partition walks a
    /// fresh permutation each epoch; the smaller one is drawn with replacement. A batch
    /// never spans two epochs, so the last one of an epoch may be short.
    pub fn next_indices(&mut self, batch: usize, rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
        if batch == 0 {
            return Err(CiganError::Invalid("batch must be ≥ 1".into()));
        }
        if self.sampler.order.is_empty() || self.sampler.cursor >= self.sampler.order.len() {
            let mut order: Vec<usize> = (0..self.epoch_len()).collect();
            rng.shuffle(&mut order);
            self.sampler = SamplerState { order, cursor: 0 };
        }
        let end = (self.sampler.cursor + batch).min(self.sampler.order.len());
        let major: Vec<usize> = self.sampler.order[self.sampler.cursor..end].to_vec();
        self.sampler.cursor = end;
        let minor_len = if self.normal_major() { self.low.len() } else { self.normal.len() };
        Ok(major
            .into_iter()
            .map(|m| {
                let other = rng.below(minor_len);
                if self.normal_major() {
                    (m, other)
                } else {
                    (other, m)
                }
            })
            .collect())
    }

    /// Unpaired batch of random crops `(normals, lows)`.
    pub fn sample_batch(&mut self, batch: usize, rng: &mut Rng) -> Result<(ImageTensor, ImageTensor)> {
        let pairs = self.next_indices(batch, rng)?;
        let size = self.crop_size;
        let mut normals = Vec::with_capacity(pairs.len());
        let mut lows = Vec::with_capacity(pairs.len());
        for (ni, li) in pairs {
            for (img, path, out) in [
                (&self.normal[ni], &self.normal_paths[ni], &mut normals),
                (&self.low[li], &self.low_paths[li], &mut lows),
            ] {
                let shape = Shape::new(1, 3, img.height, img.width);
                let (top, left) = imaging::crop_offsets(shape, size, rng).map_err(|_| {
                    CiganError::Data(format!(
                        "{} is {}x{}, smaller than crop {size}",
                        path.display(),
                        img.height,
                        img.width
                    ))
                })?;
                let flip = self.flip && rng.uniform() < 0.5;
                out.push(img.crop(top, left, size, flip));
            }
        }
        Ok((ImageTensor::stack(&normals)?, ImageTensor::stack(&lows)?))
    }
}

/// Convenience wrapper matching the module's operation name.
pub fn build_unpaired_dataset(normal_dir: &Path, low_dir: &Path, crop: usize) -> Result<UnpairedDataset> {
    UnpairedDataset::build(normal_dir, low_dir, crop)
}
