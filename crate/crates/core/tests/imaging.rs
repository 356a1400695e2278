mod common;

use cigan_core::autograd::{Shape, Tensor};
use cigan_core::imaging::{self, load_image, random_crop, save_image, to_grayscale, ImageTensor};
use cigan_core::Rng;
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;

fn quantized(shape: Shape, seed: u64) -> ImageTensor {
    let mut r = common::lcg(seed);
    ImageTensor::new(Tensor::from_fn(shape, |_| (r() * 255.0).floor() as f32 / 255.0)).unwrap()
}

#[test]
fn black_and_white_png_load_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let black = dir.path().join("black.png");
    let white = dir.path().join("white.png");
    RgbImage::from_pixel(5, 4, Rgb([0, 0, 0])).save(&black).unwrap();
    RgbImage::from_pixel(5, 4, Rgb([255, 255, 255])).save(&white).unwrap();
    let b = load_image(&black).unwrap();
    assert_eq!(b.shape(), Shape::new(1, 3, 4, 5));
    assert!(b.tensor().data().iter().all(|&v| v == 0.0));
    assert!(load_image(&white).unwrap().tensor().data().iter().all(|&v| v == 1.0));
}

#[test]
fn code_128_is_exact_division() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.png");
    GrayImage::from_pixel(3, 3, Luma([128])).save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.shape().channels(), 1);
    assert_eq!(img.tensor().data()[0], 128.0f32 / 255.0);
    assert!((img.tensor().data()[0] as f64 - 0.50196).abs() < 1e-5);
}

#[test]
fn load_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    assert!(load_image(&missing).unwrap_err().to_string().contains("missing.png"));
    let rgba = dir.path().join("alpha.png");
    image::RgbaImage::from_pixel(2, 2, image::Rgba([1, 2, 3, 4])).save(&rgba).unwrap();
    assert!(load_image(&rgba).unwrap_err().to_string().contains("alpha.png"));
    let deep = dir.path().join("deep.png");
    image::ImageBuffer::<Luma<u16>, Vec<u16>>::from_pixel(2, 2, Luma([300])).save(&deep).unwrap();
    assert!(load_image(&deep).unwrap_err().to_string().contains("deep.png"));
}

#[test]
fn save_quantizes_half_up_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("half.png");
    let half = ImageTensor::new(Tensor::full(Shape::new(1, 3, 2, 2), 0.5f32)).unwrap();
    save_image(&half, &p).unwrap();
    let raw = image::open(&p).unwrap().to_rgb8();
    assert_eq!(raw.get_pixel(0, 0).0, [128, 128, 128]);

    let zeros = ImageTensor::new(Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3))).unwrap();
    save_image(&zeros, &p).unwrap();
    assert!(image::open(&p).unwrap().to_luma8().pixels().all(|px| px.0[0] == 0));

    for (i, c) in [1, 3].into_iter().enumerate() {
        let q = quantized(Shape::new(1, c, 7, 9), i as u64);
        let path = dir.path().join(format!("q{c}.png"));
        save_image(&q, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), q);
    }
}

#[test]
fn save_rejects_batches_and_bad_paths() {
    let b2 = ImageTensor::new(Tensor::<f32>::zeros(Shape::new(2, 3, 4, 4))).unwrap();
    assert!(save_image(&b2, std::path::Path::new("/tmp/x.png")).is_err());
    let one = ImageTensor::new(Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4))).unwrap();
    assert!(save_image(&one, std::path::Path::new("/nonexistent-dir/x.png")).is_err());
}

#[test]
fn crop_of_exact_size_is_identity() {
    let img = quantized(Shape::new(1, 3, 16, 16), 1);
    let mut rng = Rng::new(3);
    assert_eq!(random_crop(&img, 16, &mut rng).unwrap(), img);
    assert!(random_crop(&img, 17, &mut rng).is_err());
}

#[test]
fn crop_is_deterministic_per_seed() {
    let img = quantized(Shape::new(1, 3, 40, 40), 2);
    let a = random_crop(&img, 20, &mut Rng::new(9)).unwrap();
    let b = random_crop(&img, 20, &mut Rng::new(9)).unwrap();
    assert_eq!(a, b);
}

/// Chi-square test of crop offsets of a 2×-oversized image against the uniform law.
#[test]
fn crop_offsets_are_uniform() {
    let size = 8;
    let n_off = size + 1; // 16 - 8 + 1 valid offsets per axis
    let img = ImageTensor::new(Tensor::from_fn(Shape::new(1, 1, 16, 16), |[_, _, y, x]| {
        (y * 16 + x) as f32 / 255.0
    }))
    .unwrap();
    let mut rng = Rng::new(2024);
    let draws = 10_000;
    let mut counts = vec![0usize; n_off * n_off];
    for _ in 0..draws {
        let c = random_crop(&img, size, &mut rng).unwrap();
        let code = (c.tensor().data()[0] * 255.0).round() as usize;
        counts[(code / 16) * n_off + code % 16] += 1;
    }
    let expected = draws as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // 80 degrees of freedom, upper 1% point.
    assert!(chi2 < 112.33, "chi2 = {chi2}");
}

#[test]
fn grayscale_matches_per_pixel_mean() {
    let one = ImageTensor::new(Tensor::full(Shape::new(1, 3, 1, 1), 1.0f32)).unwrap();
    assert_eq!(to_grayscale(&one).unwrap().tensor().data(), &[1.0]);
    let red = ImageTensor::new(Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1.0f32, 0.0, 0.0]).unwrap()).unwrap();
    assert!((to_grayscale(&red).unwrap().tensor().data()[0] as f64 - 1.0 / 3.0).abs() < 1e-7);

    let img = quantized(Shape::new(2, 3, 6, 5), 4);
    let g = to_grayscale(&img).unwrap();
    for b in 0..2 {
        for y in 0..6 {
            for x in 0..5 {
                let t = img.tensor();
                let oracle = (t.get([b, 0, y, x]) as f64 + t.get([b, 1, y, x]) as f64 + t.get([b, 2, y, x]) as f64) / 3.0;
                assert!((g.tensor().get([b, 0, y, x]) as f64 - oracle).abs() < 1e-7);
            }
        }
    }
    assert!(to_grayscale(&g).is_err());
}

proptest! {
    #[test]
    fn crop_is_a_pure_gather(seed in 0u64..1000, size in 1usize..12) {
        let img = quantized(Shape::new(1, 3, 12, 12), seed);
        let mut rng = Rng::new(seed);
        let c = random_crop(&img, size, &mut rng).unwrap();
        let src: std::collections::HashSet<u32> = img.tensor().data().iter().map(|v| v.to_bits()).collect();
        prop_assert!(c.tensor().data().iter().all(|v| src.contains(&v.to_bits())));
    }

    #[test]
    fn grayscale_stays_in_range(vals in prop::collection::vec(0.0f32..=1.0, 27)) {
        let img = ImageTensor::new(Tensor::from_vec(Shape::new(1, 3, 3, 3), vals).unwrap()).unwrap();
        let g = to_grayscale(&img).unwrap();
        prop_assert!(g.tensor().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn quantized_round_trip_is_identity(codes in prop::collection::vec(0u8..=255, 48)) {
        let t = Tensor::from_vec(Shape::new(1, 3, 4, 4), codes.iter().map(|&c| c as f32 / 255.0).collect()).unwrap();
        let img = ImageTensor::new(t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        save_image(&img, &p).unwrap();
        prop_assert_eq!(load_image(&p).unwrap(), img);
    }
}

#[test]
fn resize_and_flip_preserve_values() {
    let img = quantized(Shape::new(1, 3, 4, 6), 5);
    let f = imaging::flip_horizontal(&imaging::flip_horizontal(&img));
    assert_eq!(f, img);
    let r = imaging::resize_nearest(&img, 4, 6);
    assert_eq!(r, img);
}
