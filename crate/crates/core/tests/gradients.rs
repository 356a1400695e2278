//! Input gradients of the differentiable blocks against central finite differences.

mod common;

use cigan_core::autograd::Shape;
use cigan_core::blocks::{frp_perturb, lip_fuse, Dam, FrpNoise, Lgt};
use cigan_core::discriminators::{aggregate, Discriminator};
use cigan_core::losses::exposure_loss;
use cigan_core::nn::{ParamStore, Params};
use cigan_core::Rng;
use common::{grad_rel_error, straddles_kink, uniform};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
const INSTANCES: u64 = 5;

fn feature_shape() -> Shape {
    Shape::new(1, 2, 8, 8)
}

fn assert_close(what: &str, instance: u64, err: f64) {
    assert!(err <= TOL, "{what} instance {instance}: relative error {err:.3e}");
}

#[test]
fn lgt_content_and_reference() {
    for k in 0..INSTANCES {
        let lgt = Lgt::new("lgt", 2);
        let mut store = ParamStore::<f64>::new();
        lgt.init(&mut store, 100 + k);
        let content = uniform(feature_shape(), 10 + k, -1.0, 1.0);
        let reference = uniform(feature_shape(), 20 + k, -1.0, 1.0);

        let err = grad_rel_error(&content, H, k, |g, x| {
            let r = g.constant(reference.clone());
            lgt.forward(g, Params::frozen(&store), x, r)
        });
        assert_close("lgt/content", k, err);

        let err = grad_rel_error(&reference, H, k, |g, r| {
            let c = g.constant(content.clone());
            lgt.forward(g, Params::frozen(&store), c, r)
        });
        assert_close("lgt/reference", k, err);
    }
}

#[test]
fn frp_with_frozen_noise() {
    for k in 0..INSTANCES {
        let x = uniform(feature_shape(), 30 + k, -1.0, 1.0);
        let noise = FrpNoise::<f64>::sample(feature_shape(), &mut Rng::new(k));
        let t1 = uniform(Shape::new(1, 2, 1, 1), 40 + k, -0.5, 0.5);
        let t2 = uniform(Shape::new(1, 2, 1, 1), 50 + k, -0.5, 0.5);
        let err = grad_rel_error(&x, H, k, |g, v| {
            let a = g.constant(t1.clone());
            let b = g.constant(t2.clone());
            frp_perturb(g, v, a, b, &noise)
        });
        assert_close("frp/x", k, err);
        let err = grad_rel_error(&t1, H, k, |g, a| {
            let v = g.constant(x.clone());
            let b = g.constant(t2.clone());
            frp_perturb(g, v, a, b, &noise)
        });
        assert_close("frp/theta1", k, err);
    }
}

#[test]
fn dam_input() {
    for k in 0..INSTANCES {
        let dam = Dam::new("dam", 2);
        let mut store = ParamStore::<f64>::new();
        dam.init(&mut store, 200 + k);
        let x = uniform(feature_shape(), 60 + k, -1.0, 1.0);
        let err = grad_rel_error(&x, H, k, |g, v| dam.forward(g, Params::frozen(&store), v));
        assert_close("dam", k, err);
    }
}

#[test]
fn lip_fusion_both_operands() {
    for k in 0..INSTANCES {
        let a = uniform(feature_shape(), 70 + k, 0.0, 1.0);
        let b = uniform(feature_shape(), 80 + k, 0.0, 1.0);
        let err = grad_rel_error(&a, H, k, |g, v| {
            let w = g.constant(b.clone());
            lip_fuse(g, v, w, 1.0)
        });
        assert_close("lip/a", k, err);
        let err = grad_rel_error(&b, H, k, |g, v| {
            let w = g.constant(a.clone());
            lip_fuse(g, w, v, 1.5)
        });
        assert_close("lip/b", k, err);
    }
}

#[test]
fn exposure_loss_image() {
    for k in 0..INSTANCES {
        let img = uniform(Shape::new(1, 3, 16, 16), 90 + k, 0.0, 0.4);
        for gray in [true, false] {
            let err = grad_rel_error(&img, H, k, |g, v| exposure_loss(g, v, 0.1, 0.1, 7, gray));
            assert_close("exposure", k, err);
        }
    }
}

/// The discriminator needs 32×32 inputs, so this uses the smallest admissible image.
#[test]
fn mfpd_aggregate_score() {
    // The score is piecewise linear in the image. Draws whose stencil straddles a
    // leaky-ReLU kink are skipped; elsewhere central differences are exact.
    let mut checked = 0;
    for k in 0..4 * INSTANCES {
        let d = Discriminator::new("d", 16, true);
        let mut store: ParamStore<f64> = d.init(300 + k);
        // Zero heads would make the score constant; give them random values.
        for i in d.head_stages() {
            let name = format!("d.head{i}.weight");
            let shape = store.value(&name).unwrap().shape();
            store.set(&name, uniform(shape, 400 + k, -1.0, 1.0)).unwrap();
        }
        let img = uniform(Shape::new(1, 3, 32, 32), 110 + k, 0.0, 1.0);
        let score = |g: &mut cigan_core::autograd::Graph<f64>, v| {
            let set = d.forward(g, Params::frozen(&store), v)?;
            aggregate(g, &set)
        };
        if straddles_kink(&img, H, k, score) {
            continue;
        }
        assert_close("mfpd", k, grad_rel_error(&img, H, k, score));
        checked += 1;
        if checked == INSTANCES {
            return;
        }
    }
    panic!("only {checked} kink-free instances found");
}

#[test]
fn helper_detects_a_wrong_gradient() {
    let x = uniform(feature_shape(), 1, 0.5, 1.0);
    assert!(grad_rel_error(&x, H, 0, |g, v| Ok(g.square(v))) < 1e-8);
    let wrong = grad_rel_error(&x, H, 0, |g, v| {
        let d = g.detach(v);
        Ok(g.mul(v, d)?)
    });
    assert!(wrong > 0.1, "detached branch went unnoticed: {wrong}");
}
