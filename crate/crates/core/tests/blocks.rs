mod common;

use cigan_core::autograd::{Graph, Shape, Tensor};
use cigan_core::blocks::{dam_squeeze, frp_perturb, lip, lip_fuse, lip_fuse_images, Dam, Frp, FrpNoise, Lgt};
use cigan_core::nn::{ParamStore, Params};
use cigan_core::{ImageTensor, Rng};
use common::{conv_ref, lrelu_ref, max_abs_diff, uniform};
use proptest::prelude::*;

fn bias_of(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store.value(&format!("{name}.bias")).unwrap().data().to_vec()
}

fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let names: Vec<String> = store.names().map(String::from).collect();
    for (i, n) in names.iter().enumerate() {
        let shape = store.value(n).unwrap().shape();
        store.set(n, uniform(shape, seed + i as u64, -0.6, 0.6)).unwrap();
    }
}

fn run_lgt(lgt: &Lgt, store: &ParamStore<f64>, content: &Tensor<f64>, reference: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let c = g.constant(content.clone());
    let r = g.constant(reference.clone());
    let y = lgt.forward(&mut g, Params::frozen(store), c, r).unwrap();
    g.value(y).clone()
}

#[test]
fn lgt_matches_hand_convolution() {
    let lgt = Lgt::new("m", 2);
    let mut store = ParamStore::new();
    lgt.init(&mut store, 7);
    randomize(&mut store, 50);
    let content = uniform(Shape::new(1, 2, 4, 4), 1, -1.0, 1.0);
    let reference = uniform(Shape::new(1, 2, 4, 4), 2, -1.0, 1.0);
    let w = |n: &str| store.value(&format!("m.{n}.weight")).unwrap().as_ref().clone();

    let shared = lrelu_ref(&conv_ref(&reference, &w("shared"), Some(&bias_of(&store, "m.shared")), 1, 1));
    let wmap = conv_ref(&shared, &w("w"), Some(&bias_of(&store, "m.w")), 1, 1);
    let bmap = conv_ref(&shared, &w("b"), Some(&bias_of(&store, "m.b")), 1, 1);
    let oracle = Tensor::from_fn(content.shape(), |i| content.get(i) * wmap.get(i) + bmap.get(i));

    assert!(max_abs_diff(&run_lgt(&lgt, &store, &content, &reference), &oracle) < 1e-6);
}

#[test]
fn lgt_identity_and_zero_content() {
    let lgt = Lgt::new("m", 3);
    let mut store = ParamStore::new();
    lgt.init(&mut store, 1);
    for part in ["w", "b"] {
        let name = format!("m.{part}.weight");
        let shape = store.value(&name).unwrap().shape();
        store.set(&name, Tensor::zeros(shape)).unwrap();
    }
    store.set("m.w.bias", Tensor::ones(Shape::new(1, 3, 1, 1))).unwrap();
    store.set("m.b.bias", Tensor::zeros(Shape::new(1, 3, 1, 1))).unwrap();
    let content = uniform(Shape::new(2, 3, 5, 6), 3, -1.0, 1.0);
    let reference = uniform(Shape::new(2, 3, 5, 6), 4, 0.0, 1.0);
    assert_eq!(run_lgt(&lgt, &store, &content, &reference), content);

    let mut store = ParamStore::new();
    lgt.init(&mut store, 2);
    randomize(&mut store, 90);
    let zero = Tensor::zeros(content.shape());
    let b_only = run_lgt(&lgt, &store, &zero, &reference);
    let shared = lrelu_ref(&conv_ref(
        &reference,
        store.value("m.shared.weight").unwrap(),
        Some(&bias_of(&store, "m.shared")),
        1,
        1,
    ));
    let bmap = conv_ref(&shared, store.value("m.b.weight").unwrap(), Some(&bias_of(&store, "m.b")), 1, 1);
    assert!(max_abs_diff(&b_only, &bmap) < 1e-12);
}

#[test]
fn lgt_rejects_mismatched_reference() {
    let lgt = Lgt::new("m", 2);
    let mut store = ParamStore::<f64>::new();
    lgt.init(&mut store, 1);
    let mut g = Graph::new();
    let c = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
    let r = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 5)));
    assert!(lgt.forward(&mut g, Params::frozen(&store), c, r).is_err());
}

fn perturb(x: &Tensor<f64>, t1: f64, t2: f64, noise: &FrpNoise<f64>) -> Tensor<f64> {
    let c = x.shape().channels();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let a = g.constant(Tensor::full(Shape::new(1, c, 1, 1), t1));
    let b = g.constant(Tensor::full(Shape::new(1, c, 1, 1), t2));
    let y = frp_perturb(&mut g, xv, a, b, noise).unwrap();
    g.value(y).clone()
}

#[test]
fn frp_zero_theta_is_identity() {
    let frp = Frp::new("f", 4);
    let mut store = ParamStore::<f64>::new();
    frp.init(&mut store);
    let x = uniform(Shape::new(2, 4, 5, 5), 5, -2.0, 2.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = frp.forward(&mut g, Params::frozen(&store), xv, &mut Rng::new(3)).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn frp_shift_noise_is_shared_across_channels() {
    let shape = Shape::new(2, 3, 4, 5);
    let noise = FrpNoise::<f64>::sample(shape, &mut Rng::new(8));
    let y = perturb(&Tensor::zeros(shape), 0.7, 1.0, &noise);
    for b in 0..2 {
        for yy in 0..4 {
            for x in 0..5 {
                let beta = noise.beta.get([b, 0, yy, x]);
                for c in 0..3 {
                    assert_eq!(y.get([b, c, yy, x]), beta);
                }
            }
        }
    }
}

#[test]
fn frp_shift_noise_is_standard_normal() {
    let shape = Shape::new(1, 2, 10, 10);
    let mut rng = Rng::new(11);
    let mut vals = Vec::with_capacity(10_000);
    for _ in 0..100 {
        let noise = FrpNoise::<f64>::sample(shape, &mut rng);
        let y = perturb(&Tensor::zeros(shape), 0.0, 1.0, &noise);
        vals.extend((0..10).flat_map(|r| (0..10).map(move |c| (r, c))).map(|(r, c)| y.get([0, 0, r, c])));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "var {var}");
}

#[test]
fn frp_rejects_mismatched_noise() {
    let noise = FrpNoise::<f64>::sample(Shape::new(1, 2, 4, 4), &mut Rng::new(0));
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(Shape::new(1, 3, 4, 4)));
    let t = g.constant(Tensor::zeros(Shape::new(1, 3, 1, 1)));
    assert!(frp_perturb(&mut g, x, t, t, &noise).is_err());
}

#[test]
fn dam_squeeze_matches_direct_statistics() {
    let x = uniform(Shape::new(2, 3, 4, 5), 12, -1.0, 1.0);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let sq = dam_squeeze(&mut g, v).unwrap();
    for b in 0..2 {
        for y in 0..4 {
            for xx in 0..5 {
                let vals: Vec<f64> = (0..3).map(|c| x.get([b, c, y, xx])).collect();
                let avg = vals.iter().sum::<f64>() / 3.0;
                let max = vals.iter().cloned().fold(f64::MIN, f64::max);
                assert!((g.value(sq.channel_avg).get([b, 0, y, xx]) - avg).abs() < 1e-12);
                assert_eq!(g.value(sq.channel_max).get([b, 0, y, xx]), max);
            }
        }
        for c in 0..3 {
            let vals: Vec<f64> = (0..20).map(|i| x.get([b, c, i / 5, i % 5])).collect();
            let m = vals.iter().sum::<f64>() / 20.0;
            let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 19.0).sqrt();
            assert!((g.value(sq.spatial_mean).get([b, c, 0, 0]) - m).abs() < 1e-12);
            assert!((g.value(sq.spatial_std).get([b, c, 0, 0]) - s).abs() < 1e-7);
        }
    }
}

#[test]
fn dam_squeeze_of_constant_input_is_flat() {
    let x = Tensor::from_fn(Shape::new(1, 4, 6, 6), |[_, c, _, _]| c as f64 * 0.3 - 0.5);
    let mut g = Graph::new();
    let v = g.constant(x);
    let sq = dam_squeeze(&mut g, v).unwrap();
    for m in [sq.channel_avg, sq.channel_max] {
        let t = g.value(m);
        assert!(t.data().iter().all(|&e| e == t.data()[0]));
    }
    let single = g.constant(Tensor::zeros(Shape::new(1, 2, 1, 1)));
    assert!(dam_squeeze(&mut g, single).is_err());
}

fn dam_out(seed: u64, x: &Tensor<f64>) -> Tensor<f64> {
    let dam = Dam::new("a", x.shape().channels());
    let mut store = ParamStore::new();
    dam.init(&mut store, seed);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = dam.forward(&mut g, Params::frozen(&store), v).unwrap();
    g.value(y).clone()
}

#[test]
fn dam_keeps_shape() {
    for shape in [Shape::new(1, 2, 8, 8), Shape::new(2, 16, 5, 7)] {
        assert_eq!(dam_out(1, &uniform(shape, 3, -1.0, 1.0)).shape(), shape);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The attention term is a gated copy of the input, so it never exceeds the input itself.
    #[test]
    fn dam_attention_term_is_bounded(seed in 0u64..10_000, c in 1usize..6, h in 2usize..7, w in 2usize..7) {
        let x = uniform(Shape::new(1, c, h, w), seed, -3.0, 3.0);
        let y = dam_out(seed ^ 0xabc, &x);
        for (o, i) in y.data().iter().zip(x.data()) {
            prop_assert!((o - i).abs() <= i.abs() + 1e-12);
        }
    }

    #[test]
    fn lip_is_closed_symmetric_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..0.5) {
        let v = lip(a, b, 1.0);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        prop_assert!((v - lip(b, a, 1.0)).abs() < 1e-15);
        let a2 = (a + d).min(1.0);
        prop_assert!(lip(a2, b, 1.0) >= v - 1e-12);
        prop_assert!(v >= a.max(b) - 1e-12);
    }

    #[test]
    fn lip_graph_matches_scalar(vals in prop::collection::vec(0.0f64..=1.0, 32), lambda in 1.0f64..3.0) {
        let a = Tensor::from_vec(Shape::new(1, 1, 4, 4), vals[..16].to_vec()).unwrap();
        let b = Tensor::from_vec(Shape::new(1, 1, 4, 4), vals[16..].to_vec()).unwrap();
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let y = lip_fuse(&mut g, av, bv, lambda).unwrap();
        for i in 0..16 {
            prop_assert!((g.value(y).data()[i] - lip(a.data()[i], b.data()[i], lambda)).abs() < 1e-15);
        }
    }
}

#[test]
fn lip_examples() {
    assert_eq!(lip(0.0, 0.0, 1.0), 0.0);
    assert_eq!(lip(1.0, 1.0, 1.0), 1.0);
    assert!((lip(0.5, 0.5, 1.0) - 0.8).abs() < 1e-15);
}

#[test]
fn lip_rejects_bad_lambda_and_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
    let b = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 3)));
    assert!(lip_fuse(&mut g, a, a, 0.5).is_err());
    assert!(lip_fuse(&mut g, a, b, 1.0).is_err());
    let img = ImageTensor::new(Tensor::<f64>::full(Shape::new(1, 3, 2, 2), 0.5)).unwrap();
    let fused = lip_fuse_images(&img, &img, 1.0).unwrap();
    assert!(fused.tensor().data().iter().all(|&v| (v - 0.8).abs() < 1e-15));
    assert!(lip_fuse_images(&img, &img, 0.9).is_err());
}
