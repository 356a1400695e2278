//! Image I/O and pixel-level utilities. Intensities are always in `[0, 1]`.

use std::path::Path;

use cigan_autograd::{Real, Shape, Tensor};
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{CiganError, Result};
use crate::rng::Rng;

/// Smallest spatial extent the generators and discriminators accept (five halvings).
pub const MIN_EXTENT: usize = 32;

/// Batched 1- or 3-channel raster with every value finite and in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<T: Real = f32>(Tensor<T>);

impl<T: Real> ImageTensor<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        let c = t.shape().channels();
        if c != 1 && c != 3 {
            return Err(CiganError::Shape(format!(
                "image must have 1 or 3 channels, got {}",
                t.shape()
            )));
        }
        if let Some(v) = t
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < T::zero() || **v > T::one())
        {
            return Err(CiganError::Invalid(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(ImageTensor(t))
    }

    /// Clamps into range; NaN becomes 0.
    pub fn from_clamped(t: Tensor<T>) -> Result<Self> {
        let t = t.map(|v| if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) });
        Self::new(t)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn cast<U: Real>(&self) -> ImageTensor<U> {
        ImageTensor(self.0.cast())
    }

    /// Mean over every element.
    pub fn mean(&self) -> f64 {
        self.0.mean().as_f64()
    }

    pub fn stack(items: &[ImageTensor<T>]) -> Result<Self> {
        let ts: Vec<Tensor<T>> = items.iter().map(|i| i.0.clone()).collect();
        Ok(ImageTensor(Tensor::stack_batch(&ts)?))
    }

    pub fn item(&self, index: usize) -> Result<Self> {
        Ok(ImageTensor(self.0.batch_item(index)?))
    }

    /// Errors unless the image is 3-channel and at least `MIN_EXTENT` on both sides.
    pub fn require_network_input(&self, what: &str) -> Result<()> {
        let s = self.shape();
        if s.channels() != 3 {
            return Err(CiganError::Shape(format!("{what}: expected 3 channels, got {s}")));
        }
        if s.height() < MIN_EXTENT || s.width() < MIN_EXTENT {
            return Err(CiganError::Shape(format!(
                "{what}: spatial size {}x{} below minimum {MIN_EXTENT}",
                s.height(),
                s.width()
            )));
        }
        Ok(())
    }
}

/// Reads an 8-bit PNG or JPEG with 1 or 3 channels as a `[1, c, h, w]` tensor of `code / 255`.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CiganError::io(path, io),
        other => CiganError::Image {
            path: path.to_owned(),
            message: other.to_string(),
        },
    })?;
    let (channels, w, h, raw) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.width(), b.height(), b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.width(), b.height(), b.into_raw()),
        other => {
            return Err(CiganError::Image {
                path: path.to_owned(),
                message: format!("unsupported pixel format {:?}; need 8-bit gray or RGB", other.color()),
            })
        }
    };
    let t = planar_from_interleaved(&raw, channels, h as usize, w as usize);
    Ok(ImageTensor(t))
}

fn planar_from_interleaved(raw: &[u8], c: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, c, h, w), |[_, ic, y, x]| {
        raw[(y * w + x) * c + ic] as f32 / 255.0
    })
}

/// Round-half-up 8-bit code of an intensity.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes a single image as 8-bit PNG.
pub fn save_image<T: Real>(img: &ImageTensor<T>, path: &Path) -> Result<()> {
    let [b, c, h, w] = img.shape().dims();
    if b != 1 {
        return Err(CiganError::Shape(format!("save_image needs batch 1, got {}", img.shape())));
    }
    let t = img.tensor();
    let mut raw = vec![0u8; c * h * w];
    for ic in 0..c {
        for y in 0..h {
            for x in 0..w {
                raw[(y * w + x) * c + ic] = quantize(t.get([0, ic, y, x]).as_f64());
            }
        }
    }
    let (w32, h32) = (w as u32, h as u32);
    let dynamic = if c == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w32, h32, raw).expect("sized buffer"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w32, h32, raw).expect("sized buffer"))
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => CiganError::io(path, io),
            other => CiganError::Image {
                path: path.to_owned(),
                message: other.to_string(),
            },
        })
}

/// Gray images replicated to three channels; RGB passes through.
pub fn to_rgb<T: Real>(img: &ImageTensor<T>) -> ImageTensor<T> {
    if img.shape().channels() == 3 {
        return img.clone();
    }
    let [b, _, h, w] = img.shape().dims();
    let t = img.tensor();
    ImageTensor(Tensor::from_fn(Shape::new(b, 3, h, w), |[ib, _, y, x]| t.get([ib, 0, y, x])))
}

/// Per-pixel unweighted mean of R, G and B.
pub fn to_grayscale<T: Real>(img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let [b, c, h, w] = img.shape().dims();
    if c != 3 {
        return Err(CiganError::Shape(format!("to_grayscale needs 3 channels, got {}", img.shape())));
    }
    let t = img.tensor();
    let three = T::from_f64_lossy(3.0);
    let g = Tensor::from_fn(Shape::new(b, 1, h, w), |[ib, _, y, x]| {
        let s = t.get([ib, 0, y, x]) + t.get([ib, 1, y, x]) + t.get([ib, 2, y, x]);
        (s / three).min(T::one())
    });
    Ok(ImageTensor(g))
}

/// Mean gray luminance over a batch (gray images count as-is).
pub fn mean_luminance<T: Real>(img: &ImageTensor<T>) -> f64 {
    img.mean()
}

/// Extracts the `size×size` window at (`top`, `left`).
pub fn crop<T: Real>(img: &ImageTensor<T>, top: usize, left: usize, size: usize) -> Result<ImageTensor<T>> {
    let [b, c, h, w] = img.shape().dims();
    if top + size > h || left + size > w {
        return Err(CiganError::Shape(format!(
            "crop {size}x{size} at ({top}, {left}) exceeds {h}x{w}"
        )));
    }
    let t = img.tensor();
    Ok(ImageTensor(Tensor::from_fn(Shape::new(b, c, size, size), |[ib, ic, y, x]| {
        t.get([ib, ic, top + y, left + x])
    })))
}

/// Uniformly placed square crop. Draws the row offset, then the column offset.
pub fn random_crop<T: Real>(img: &ImageTensor<T>, size: usize, rng: &mut Rng) -> Result<ImageTensor<T>> {
    let (top, left) = crop_offsets(img.shape(), size, rng)?;
    crop(img, top, left, size)
}

pub(crate) fn crop_offsets(shape: Shape, size: usize, rng: &mut Rng) -> Result<(usize, usize)> {
    let (h, w) = (shape.height(), shape.width());
    if size == 0 || h < size || w < size {
        return Err(CiganError::Shape(format!(
            "image {h}x{w} smaller than crop size {size}"
        )));
    }
    let top = rng.below(h - size + 1);
    let left = rng.below(w - size + 1);
    Ok((top, left))
}

pub fn flip_horizontal<T: Real>(img: &ImageTensor<T>) -> ImageTensor<T> {
    let w = img.shape().width();
    let t = img.tensor();
    ImageTensor(Tensor::from_fn(img.shape(), |[ib, ic, y, x]| t.get([ib, ic, y, w - 1 - x])))
}

/// Nearest-neighbour resize, used to match a reference image to an input's size.
pub fn resize_nearest<T: Real>(img: &ImageTensor<T>, h: usize, w: usize) -> ImageTensor<T> {
    let [b, c, ih, iw] = img.shape().dims();
    let t = img.tensor();
    ImageTensor(Tensor::from_fn(Shape::new(b, c, h, w), |[ib, ic, y, x]| {
        t.get([ib, ic, (y * ih / h).min(ih - 1), (x * iw / w).min(iw - 1)])
    }))
}

/// Image file extensions picked up when scanning a directory.
pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}
