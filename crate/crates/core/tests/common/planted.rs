//! Synthetic depthwise checkpoints with known kernel classes.

use super::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vgnet::analyze::{analyze_checkpoint, KernelClass, Thresholds};
use vgnet::checkpoint::{Checkpoint, TensorRecord};
use vgnet::kernels::{edge_kernel_bank, gaussian_kernel, BankVariant, FixedKernel};

pub const CLASSES: [KernelClass; 4] = [KernelClass::Identity, KernelClass::Lowpass, KernelClass::Edge, KernelClass::Zero];

/// One kernel of the planted class with random scale and sign.
pub fn plant(class: KernelClass, g: &mut ChaCha8Rng) -> Vec<f64> {
    let base = match class {
        KernelClass::Identity => FixedKernel::identity(3).unwrap().values,
        KernelClass::Lowpass => gaussian_kernel(3, g.random_range(1.0..3.0)).unwrap().values,
        KernelClass::Edge => {
            let bank = edge_kernel_bank(BankVariant::Ek6Gk2);
            bank.kernels()[g.random_range(0..6)].values.clone()
        }
        _ => vec![0.0; 9],
    };
    let scale = g.random_range(0.2..2.0) * if g.random_bool(0.5) { -1.0 } else { 1.0 };
    base.iter().map(|v| v * scale).collect()
}

/// Adds i.i.d. noise with standard deviation `level` times the kernel's own
/// RMS, so zero kernels stay zero.
pub fn perturb(v: &mut [f64], level: f64, g: &mut ChaCha8Rng) {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if rms == 0.0 {
        return;
    }
    let n = Normal::new(0.0, level * rms).unwrap();
    v.iter_mut().for_each(|x| *x += n.sample(g));
}

/// A checkpoint with `layers` depthwise tensors of `per_class` kernels of
/// each planted class, interleaved, plus the truth labels.
pub fn planted(layers: usize, per_class: usize, noise: f64, seed: u64) -> (Checkpoint, Vec<Vec<KernelClass>>) {
    let mut g = rng(seed);
    let mut tensors = Vec::new();
    let mut truth = Vec::new();
    for l in 0..layers {
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for i in 0..per_class * 4 {
            let class = CLASSES[i % 4];
            let mut k = plant(class, &mut g);
            perturb(&mut k, noise, &mut g);
            data.extend(k.iter().map(|&v| v as f32));
            labels.push(class);
        }
        tensors.push(TensorRecord {
            name: format!("block{l}.dw.weight"),
            flags: 1,
            dims: vec![labels.len() as u32, 1, 3, 3],
            data,
        });
        tensors.push(TensorRecord {
            name: format!("block{l}.pw.weight"),
            flags: 1,
            dims: vec![4, labels.len() as u32, 1, 1],
            data: vec![0.5; 4 * labels.len()],
        });
        truth.push(labels);
    }
    (Checkpoint { header: String::new(), tensors }, truth)
}

pub fn errors(ckpt: &Checkpoint, truth: &[Vec<KernelClass>]) -> (usize, usize) {
    let report = analyze_checkpoint(ckpt, &Thresholds::default());
    assert_eq!(report.layers.len(), truth.len(), "pointwise tensors must be skipped");
    let mut wrong = 0;
    for (layer, labels) in report.layers.iter().zip(truth) {
        for (k, want) in layer.kernels.iter().zip(labels) {
            wrong += (k.class != *want) as usize;
        }
    }
    (wrong, report.kernel_count())
}

