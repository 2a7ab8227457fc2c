//! Optimizer exemptions, fixed-kernel freezing, determinism and data loading.

mod common;

use common::rng;
use vgnet::arch::{Layout, Model, ModelSpec, SpecOptions, Variant};
use vgnet::ops::softmax_cross_entropy;
use vgnet::train::{
    encode_cifar, evaluate, load_cifar, sgd_step, synthetic_edges, synthetic_gaussian_blobs, top_k_correct, train,
    EdgeParams, Normalization, OptimizerState, SgdConfig, Split, TrainConfig,
};
use vgnet::{Shape, Tensor};

fn quick_config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        base_lr: lr,
        warmup_epochs: 0,
        augment: false,
        ..TrainConfig::desk()
    }
}

/// Runs `steps` SGD steps on random images and labels.
fn random_steps(model: &mut Model, steps: usize, sgd: SgdConfig, seed: u64) {
    let spec = model.spec().clone();
    let r = spec.options.input_resolution;
    let mut g = rng(seed);
    let mut state = OptimizerState::new(model.params(), sgd);
    for step in 0..steps {
        let x = Tensor::randn(Shape::new(4, 3, r, r), 1.0, &mut g);
        let y: Vec<usize> = (0..4).map(|i| (i + step) % spec.options.num_classes).collect();
        model.zero_grad();
        let (logits, tape) = model.forward_train(&x).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &y, 0.1).unwrap();
        model.backward(tape, &grad).unwrap();
        sgd_step(model.params_mut(), &mut state, 0.05).unwrap();
    }
}

#[test]
fn exemption_flags_cover_exactly_norms_and_biases() {
    let options = SpecOptions { use_se: true, ..ModelSpec::micro(Variant::G, 4).options };
    let model: Model = Model::build(&ModelSpec::from_layout(&Layout::micro(), Variant::G, options).unwrap(), 0).unwrap();
    for p in model.params() {
        let is_norm_or_bias = p.name.ends_with(".bias") || p.name.contains(".bn.");
        if p.fixed_kernel {
            assert!(!p.learnable, "{}", p.name);
            continue;
        }
        assert_eq!(p.decay_exempt, is_norm_or_bias, "{}", p.name);
    }
    for b in model.buffers() {
        assert!(!b.learnable, "{}", b.name);
    }
}

#[test]
fn fixed_kernels_are_bit_identical_after_training() {
    for variant in [Variant::G, Variant::F2, Variant::F4] {
        let mut model = Model::build(&ModelSpec::micro(variant, 4), 3).unwrap();
        let before = model.clone();
        random_steps(&mut model, 100, SgdConfig::default(), 9);
        let mut fixed = 0;
        for (a, b) in before.params().iter().zip(model.params()) {
            if a.fixed_kernel {
                fixed += 1;
                assert_eq!(a.tensor.data(), b.tensor.data(), "{variant:?} {}", a.name);
            } else if a.learnable && a.name.ends_with(".weight") {
                assert_ne!(a.tensor.data(), b.tensor.data(), "{variant:?} {} never moved", a.name);
            }
        }
        assert!(fixed > 0, "{variant:?} has no fixed kernels");
    }
}

/// With every gradient zero the only force on a weight is decay, so exempt
/// tensors must stay put while decayed ones shrink; the control run with
/// exemptions ignored shrinks everything.
#[test]
fn zero_gradient_isolates_weight_decay() {
    let model: Model = Model::build(&ModelSpec::micro(Variant::G, 4), 5).unwrap();
    let run = |honor: bool| {
        let mut m = model.clone();
        let cfg = SgdConfig { weight_decay: 1e-2, honor_exemptions: honor, ..SgdConfig::default() };
        let mut state = OptimizerState::new(m.params(), cfg);
        for _ in 0..100 {
            m.zero_grad();
            sgd_step(m.params_mut(), &mut state, 0.1).unwrap();
        }
        m
    };
    let (honored, control) = (run(true), run(false));
    let mut exempt = 0;
    for ((p0, ph), pc) in model.params().iter().zip(honored.params()).zip(control.params()) {
        if !p0.learnable {
            assert_eq!(p0.tensor.data(), ph.tensor.data());
            continue;
        }
        let norm = |p: &vgnet::Parameter| p.tensor.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>();
        if p0.decay_exempt {
            exempt += 1;
            assert_eq!(p0.tensor.data(), ph.tensor.data(), "{} decayed", p0.name);
            if norm(p0) > 0.0 {
                assert!(norm(pc) < norm(p0), "control left {} undecayed", p0.name);
            }
        } else {
            assert!(norm(ph) < norm(p0), "{} not decayed", p0.name);
            assert_eq!(ph.tensor.data(), pc.tensor.data());
        }
    }
    assert!(exempt > 0);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = synthetic_gaussian_blobs(64, 4, 32, 1);
    let mut model = Model::build(&ModelSpec::micro(Variant::C, 4), 2).unwrap();
    let before = model.clone();
    train(&mut model, &data, None, &quick_config(2, 0.0), |_| {}).unwrap();
    for (a, b) in before.params().iter().zip(model.params()) {
        assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
    }
    assert!(
        before.buffers().iter().zip(model.buffers()).any(|(a, b)| a.tensor.data() != b.tensor.data()),
        "running statistics should still update"
    );
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let data = synthetic_edges(96, EdgeParams::default(), 4);
    let run = |seed| {
        let mut model = Model::build(&ModelSpec::micro(Variant::G, 4), 7).unwrap();
        let config = TrainConfig { seed, augment: true, ..quick_config(2, 0.05) };
        let log = train(&mut model, &data, None, &config, |_| {}).unwrap();
        (model.to_checkpoint(&[]).to_bytes(), log[1].train_loss)
    };
    let (a, b, c) = (run(11), run(11), run(12));
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

/// Every variant memorises a small sample.
#[test]
fn variants_overfit_sixty_four_samples() {
    let data = synthetic_edges(64, EdgeParams::default(), 8);
    for variant in [Variant::C, Variant::G, Variant::F2, Variant::F4] {
        let mut model = Model::build(&ModelSpec::micro(variant, 4), 1).unwrap();
        let mut epochs = 0;
        let mut acc = 0.0;
        while epochs < 200 {
            train(&mut model, &data, None, &quick_config(25, 0.05), |_| {}).unwrap();
            epochs += 25;
            acc = evaluate(&model, &data, 64).unwrap().top1;
            if acc >= 1.0 {
                break;
            }
        }
        assert!(acc >= 1.0, "{variant:?} reached only {acc} after {epochs} epochs");
    }
}

#[test]
fn cifar_binary_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut images = vec![[0u8; 3072]; 3];
    for (i, img) in images.iter_mut().enumerate() {
        for (j, v) in img.iter_mut().enumerate() {
            *v = ((i * 31 + j) % 256) as u8;
        }
    }
    let labels = [3u8, 0, 9];
    for b in 1..=5 {
        std::fs::write(dir.path().join(format!("data_batch_{b}.bin")), encode_cifar(&images, &labels, 1)).unwrap();
    }
    std::fs::write(dir.path().join("test_batch.bin"), encode_cifar(&images[..1], &labels[..1], 1)).unwrap();

    let train_set = load_cifar(dir.path(), Split::Train, &Normalization::IDENTITY).unwrap();
    assert_eq!(train_set.len(), 15);
    assert_eq!(train_set.num_classes, 10);
    assert_eq!(&train_set.labels[..3], &[3, 0, 9]);
    for (i, img) in images.iter().enumerate() {
        let decoded = train_set.images.sample(i);
        for (j, &v) in img.iter().enumerate() {
            assert_eq!(decoded[j], v as f32 / 255.0);
        }
    }
    assert_eq!(load_cifar(dir.path(), Split::Test, &Normalization::IDENTITY).unwrap().len(), 1);

    std::fs::write(dir.path().join("test_batch.bin"), vec![0u8; 3000]).unwrap();
    let err = load_cifar(dir.path(), Split::Test, &Normalization::IDENTITY).unwrap_err();
    assert!(err.to_string().contains("3000 bytes"), "{err}");
}

/// Top-k hits on random logits follow Binomial(n, k/K).
#[test]
fn top_k_matches_chance_on_random_logits() {
    let (n, classes) = (20_000, 100);
    let logits = Tensor::randn(Shape::matrix(n, classes), 1.0, &mut rng(21));
    let mut g = rng(22);
    let labels: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut g, 0..classes)).collect();
    for k in [1, 5] {
        let p = k as f64 / classes as f64;
        let hits = top_k_correct(&logits, &labels, k) as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - n as f64 * p).abs() < 4.0 * sigma, "top-{k}: {hits}");
    }
}
