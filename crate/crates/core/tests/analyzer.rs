//! Kernel taxonomy on planted checkpoints with known answers.

mod common;

use common::planted::{errors, plant, planted, CLASSES};
use common::rng;
use proptest::prelude::*;
use vgnet::analyze::{analyze_checkpoint, score_kernel, KernelClass, Thresholds};

#[test]
fn noiseless_planted_fractions_are_exact() {
    let (ckpt, truth) = planted(3, 25, 0.0, 1);
    assert_eq!(errors(&ckpt, &truth), (0, 300));
    let report = analyze_checkpoint(&ckpt, &Thresholds::default());
    for layer in &report.layers {
        assert_eq!(layer.counts(), [25, 25, 25, 25, 0]);
        let total: f64 = KernelClass::ALL.iter().map(|&c| layer.fraction(c)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    for c in CLASSES {
        assert_eq!(report.fraction(c), 0.25);
    }
}

#[test]
fn five_percent_noise_misclassifies_at_most_two_percent() {
    let (ckpt, truth) = planted(4, 250, 0.05, 2);
    let (wrong, total) = errors(&ckpt, &truth);
    let rate = wrong as f64 / total as f64;
    println!("planted noise 5%: {wrong}/{total} misclassified");
    assert!(rate <= 0.02, "{rate}");
}

#[test]
fn report_csv_has_one_row_per_kernel() {
    let (ckpt, _) = planted(2, 3, 0.0, 3);
    let report = analyze_checkpoint(&ckpt, &Thresholds::default());
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "layer,channel,class,score_identity,score_lowpass,score_edge,score_zero");
    assert_eq!(lines.count(), 24);
}

proptest! {
    #[test]
    fn classification_ignores_scale_and_sign(seed in 0u64..10_000, class in 0usize..3, scale in 0.01f64..100.0, flip: bool) {
        let mut g = rng(seed);
        let k = plant(CLASSES[class], &mut g);
        let max = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let base = score_kernel(&k, 3, max, &Thresholds::default());
        let s = if flip { -scale } else { scale };
        let scaled: Vec<f64> = k.iter().map(|v| v * s).collect();
        let other = score_kernel(&scaled, 3, max * scale, &Thresholds::default());
        prop_assert_eq!(base.class, other.class);
        prop_assert!((base.identity - other.identity).abs() < 1e-9);
        prop_assert!((base.lowpass - other.lowpass).abs() < 1e-9);
        prop_assert!((base.edge - other.edge).abs() < 1e-9);
    }
}
