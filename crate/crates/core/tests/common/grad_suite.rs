//! Finite-difference checks shared by the gradient tests and the acceptance
//! gate. Each function panics with the offending tensor on failure.

use super::{dot, max_rel_err, numeric_grad, pick, randn64, rng};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vgnet::arch::{Layout, Model, ModelSpec, SpecOptions, Variant};
use vgnet::ops::{
    activation, activation_backward, batchnorm_backward, batchnorm_train, conv2d_backward, conv2d_forward,
    global_avg_pool, global_avg_pool_backward, linear, linear_backward, scale_channels, scale_channels_backward,
    softmax_cross_entropy, Activation, Conv2dConfig,
};
use vgnet::{Shape, Tensor};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-5;
pub const SHAPES: usize = 6;

fn with_data(shape: Shape, data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn check(label: &str, analytic: &[f64], numeric: &[f64]) {
    let err = max_rel_err(analytic, numeric);
    if err >= TOL {
        for (i, (a, b)) in analytic.iter().zip(numeric).enumerate().filter(|(_, (a, b))| super::rel_err(**a, **b) > TOL).take(8) {
            eprintln!("{label}[{i}] analytic {a:e} numeric {b:e}");
        }
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        eprintln!("{label}: largest |grad| {scale:e}");
    }
    assert!(err < TOL, "{label}: max relative error {err:e}");
}

fn conv_case(r: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, Vec<f64>, Conv2dConfig) {
    let k = pick(r, &[1usize, 3, 5]);
    let stride = pick(r, &[1usize, 2]);
    let c = pick(r, &[2usize, 4]);
    let groups = pick(r, &[1, 2, c]);
    let cout = if groups == c { c } else { groups * r.random_range(1..=2) };
    let x = randn64(Shape::new(r.random_range(1..=2), c, r.random_range(k.max(3)..7), r.random_range(k.max(3)..7)), r);
    let w = randn64(Shape::new(cout, c / groups, k, k), r);
    let b = (0..cout).map(|_| r.random_range(-1.0..1.0)).collect();
    (x, w, b, Conv2dConfig::same(k, stride, groups))
}

pub fn conv_input_weight_and_bias() {
    let mut r = rng(1);
    for case in 0..SHAPES + 2 {
        let (x, w, b, cfg) = conv_case(&mut r);
        let y = conv2d_forward(&x, &w, Some(&b), cfg).unwrap();
        let probe = randn64(y.shape(), &mut r);
        let grads = conv2d_backward(&probe, &x, &w, cfg, true, true).unwrap();
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]| dot(conv2d_forward(x, w, Some(b), cfg).unwrap().data(), probe.data());

        let nx = numeric_grad(x.data(), H, |d| loss(&with_data(x.shape(), d), &w, &b));
        check(&format!("conv input case {case}"), grads.input.data(), &nx);
        let nw = numeric_grad(w.data(), H, |d| loss(&x, &with_data(w.shape(), d), &b));
        check(&format!("conv weight case {case}"), grads.weight.unwrap().data(), &nw);
        let nb = numeric_grad(&b, H, |d| loss(&x, &w, d));
        check(&format!("conv bias case {case}"), &grads.bias.unwrap(), &nb);
    }
}

pub fn batchnorm_train_mode() {
    let mut r = rng(2);
    for case in 0..SHAPES {
        let s = Shape::new(r.random_range(2..4), r.random_range(1..4), r.random_range(1..5), r.random_range(2..5));
        let x = randn64(s, &mut r);
        let scale: Vec<f64> = (0..s.c).map(|_| r.random_range(0.5..1.5)).collect();
        let shift: Vec<f64> = (0..s.c).map(|_| r.random_range(-1.0..1.0)).collect();
        let probe = randn64(s, &mut r);
        let (_, cache, _) = batchnorm_train(&x, &scale, &shift, 1e-5).unwrap();
        let (gi, gs, gb) = batchnorm_backward(&probe, &cache, &scale).unwrap();
        let loss = |x: &Tensor<f64>, sc: &[f64], sh: &[f64]| dot(batchnorm_train(x, sc, sh, 1e-5).unwrap().0.data(), probe.data());

        check(&format!("bn input case {case}"), gi.data(), &numeric_grad(x.data(), H, |d| loss(&with_data(s, d), &scale, &shift)));
        check(&format!("bn scale case {case}"), &gs, &numeric_grad(&scale, H, |d| loss(&x, d, &shift)));
        check(&format!("bn shift case {case}"), &gb, &numeric_grad(&shift, H, |d| loss(&x, &scale, d)));
    }
}

pub fn activations() {
    let mut r = rng(3);
    for kind in [Activation::Relu, Activation::Silu] {
        for case in 0..SHAPES {
            let s = Shape::new(r.random_range(1..3), r.random_range(1..4), r.random_range(1..5), r.random_range(1..5));
            // Keep samples away from the ReLU kink so the difference quotient is defined.
            let x = Tensor::<f64>::from_fn(s, |_, _, _, _| {
                let v: f64 = r.random_range(0.01..3.0);
                if r.random_bool(0.5) { v } else { -v }
            });
            let probe = randn64(s, &mut r);
            let g = activation_backward(&probe, &x, kind);
            let n = numeric_grad(x.data(), H, |d| dot(activation(&with_data(s, d), kind).data(), probe.data()));
            check(&format!("{} case {case}", kind.name()), g.data(), &n);
        }
    }
}

pub fn global_pool_and_channel_gate() {
    let mut r = rng(4);
    for case in 0..SHAPES {
        let s = Shape::new(r.random_range(1..3), r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let x = randn64(s, &mut r);
        let probe = randn64(Shape::matrix(s.n, s.c), &mut r);
        let g = global_avg_pool_backward(&probe, s).unwrap();
        let n = numeric_grad(x.data(), H, |d| dot(global_avg_pool(&with_data(s, d)).unwrap().data(), probe.data()));
        check(&format!("avgpool case {case}"), g.data(), &n);

        let gate = randn64(Shape::matrix(s.n, s.c), &mut r);
        let probe = randn64(s, &mut r);
        let (gi, gg) = scale_channels_backward(&probe, &x, &gate).unwrap();
        let loss = |x: &Tensor<f64>, gate: &Tensor<f64>| dot(scale_channels(x, gate).unwrap().data(), probe.data());
        check(&format!("gate input case {case}"), gi.data(), &numeric_grad(x.data(), H, |d| loss(&with_data(s, d), &gate)));
        check(
            &format!("gate weights case {case}"),
            gg.data(),
            &numeric_grad(gate.data(), H, |d| loss(&x, &with_data(gate.shape(), d))),
        );
    }
}

pub fn linear_layer() {
    let mut r = rng(5);
    for case in 0..SHAPES {
        let (n, c, o) = (r.random_range(1..5), r.random_range(1..7), r.random_range(1..6));
        let x = randn64(Shape::matrix(n, c), &mut r);
        let w = randn64(Shape::matrix(o, c), &mut r);
        let b: Vec<f64> = (0..o).map(|_| r.random_range(-1.0..1.0)).collect();
        let probe = randn64(Shape::matrix(n, o), &mut r);
        let g = linear_backward(&probe, &x, &w).unwrap();
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]| dot(linear(x, w, Some(b)).unwrap().data(), probe.data());
        check(&format!("linear input case {case}"), g.input.data(), &numeric_grad(x.data(), H, |d| loss(&with_data(x.shape(), d), &w, &b)));
        check(&format!("linear weight case {case}"), g.weight.data(), &numeric_grad(w.data(), H, |d| loss(&x, &with_data(w.shape(), d), &b)));
        check(&format!("linear bias case {case}"), &g.bias, &numeric_grad(&b, H, |d| loss(&x, &w, d)));
    }
}

pub fn smoothed_cross_entropy() {
    let mut r = rng(6);
    for case in 0..SHAPES {
        let (n, k) = (r.random_range(1..6), r.random_range(2..12));
        let logits = Tensor::<f64>::randn(Shape::matrix(n, k), 3.0, &mut r);
        let targets: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        for smoothing in [0.0, 0.1] {
            let (_, g) = softmax_cross_entropy(&logits, &targets, smoothing).unwrap();
            let num = numeric_grad(logits.data(), H, |d| {
                softmax_cross_entropy(&with_data(logits.shape(), d), &targets, smoothing).unwrap().0
            });
            check(&format!("cross-entropy case {case} eps {smoothing}"), g.data(), &num);
        }
    }
}

fn tiny_spec(variant: Variant, use_se: bool) -> ModelSpec {
    let layout = Layout {
        stem_channels: 4,
        stem_stride: 1,
        stages: vec![(8, 1), (12, 1)],
        shared_t: 2,
        head_channels: 8,
    };
    let options = SpecOptions {
        activation: Activation::Silu,
        use_se,
        num_classes: 3,
        input_resolution: 8,
        ..SpecOptions::default()
    };
    ModelSpec::from_layout(&layout, variant, options).unwrap()
}

/// Probes the network with a fixed random functional of the logits; the
/// classifier is rescaled to unit variance so input gradients sit far above
/// the finite-difference roundoff floor.
fn probed(spec: &ModelSpec, seed: u64, batch: usize) -> (Model<f64>, Tensor<f64>, Tensor<f64>) {
    let mut model: Model<f64> = Model::<f32>::build(spec, seed).unwrap().cast();
    for p in model.params_mut().iter_mut().filter(|p| p.name == "classifier.weight") {
        p.tensor.data_mut().iter_mut().for_each(|v| *v *= 100.0);
    }
    let mut r = rng(100 + seed);
    let x = randn64(Shape::new(batch, 3, 8, 8), &mut r);
    let probe = randn64(Shape::matrix(batch, spec.options.num_classes), &mut r);
    (model, x, probe)
}

fn model_loss(model: &mut Model<f64>, x: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
    dot(model.forward_train(x).unwrap().0.data(), probe.data())
}

fn check_network(label: &str, spec: &ModelSpec, seed: u64, batch: usize) {
    let (mut model, x, probe) = probed(spec, seed, batch);
    model.zero_grad();
    let (_, tape) = model.forward_train(&x).unwrap();
    let gx = model.backward(tape, &probe).unwrap();

    let nx = numeric_grad(x.data(), H, |d| model_loss(&mut model, &with_data(x.shape(), d), &probe));
    check(&format!("{label} input"), gx.data(), &nx);

    for i in 0..model.params().len() {
        let p = &model.params()[i];
        if !p.learnable {
            assert!(p.tensor.grad().is_none(), "{} carries a gradient buffer", p.name);
            continue;
        }
        let (name, values) = (p.name.clone(), p.tensor.data().to_vec());
        let analytic = p.tensor.grad().unwrap().to_vec();
        let numeric = numeric_grad(&values, H, |d| {
            model.params_mut()[i].tensor.data_mut().copy_from_slice(d);
            model_loss(&mut model, &x, &probe)
        });
        model.params_mut()[i].tensor.data_mut().copy_from_slice(&values);
        check(&format!("{label} {name}"), &analytic, &numeric);
    }
}

/// Every block kind, end to end, including the SE branch and fixed kernels.
pub fn whole_network_every_learnable_tensor() {
    for (seed, (variant, se)) in [(Variant::C, true), (Variant::G, false), (Variant::F2, true)].into_iter().enumerate() {
        check_network(variant.name(), &tiny_spec(variant, se), seed as u64, 3);
    }
}

pub fn half_identity_without_reuse_and_stem_bn() {
    let mut spec = tiny_spec(Variant::C, false);
    spec.options.identity_reuse = false;
    spec.options.stem_bn = true;
    let spec = ModelSpec::from_text(&spec.to_text()).unwrap();
    check_network("no-reuse", &spec, 3, 2);
}
