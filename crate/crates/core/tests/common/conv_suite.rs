//! Randomized convolution cases checked against the reference loop.

use super::{naive_conv, pick, rng};
use rand::Rng;
use vgnet::ops::{conv2d_forward, Conv2dConfig};
use vgnet::{Shape, Tensor};

pub struct Case {
    pub x: Tensor<f32>,
    pub w: Tensor<f32>,
    pub bias: Vec<f32>,
    pub cfg: Conv2dConfig,
}

pub fn random_case(seed: u64, stride: usize, groups_mode: usize, k: usize) -> Case {
    let mut r = rng(seed);
    let per_group = pick(&mut r, &[1usize, 2, 3]);
    let c = 2 * per_group * r.random_range(1..=2);
    let groups = match groups_mode {
        0 => 1,
        1 => 2,
        _ => c,
    };
    let cout = if groups == c { c } else { groups * r.random_range(1..=3) };
    let h = r.random_range(k.max(3)..=9);
    let w = r.random_range(k.max(3)..=9);
    let n = r.random_range(1..=3);
    let xs = Shape::new(n, c, h, w);
    let ws = Shape::new(cout, c / groups, k, k);
    let fan_in = (c / groups * k * k) as f64;
    Case {
        x: Tensor::uniform(xs, 1.0, &mut r),
        w: Tensor::randn(ws, 1.0 / fan_in.sqrt(), &mut r),
        bias: (0..cout).map(|_| r.random_range(-0.5..0.5)).collect(),
        cfg: Conv2dConfig::same(k, stride, groups),
    }
}

pub fn max_abs_diff(case: &Case, with_bias: bool) -> f64 {
    let bias = with_bias.then_some(case.bias.as_slice());
    let fast = conv2d_forward(&case.x, &case.w, bias, case.cfg).unwrap();
    let x64: Vec<f64> = case.x.data().iter().map(|&v| v as f64).collect();
    let w64: Vec<f64> = case.w.data().iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = case.bias.iter().map(|&v| v as f64).collect();
    let (slow, os) = naive_conv(
        &x64,
        case.x.shape(),
        &w64,
        case.w.shape(),
        with_bias.then_some(b64.as_slice()),
        case.cfg.stride,
        case.cfg.padding,
        case.cfg.groups,
    );
    assert_eq!(fast.shape(), os);
    fast.data()
        .iter()
        .zip(&slow)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
}

/// Every stride, grouping and kernel size, with and without bias. Returns
/// the number of cases and the worst absolute difference.
pub fn oracle_matrix() -> (usize, f64) {
    let (mut cases, mut worst, mut seed) = (0, 0.0f64, 0);
    for stride in [1, 2] {
        for groups_mode in 0..3 {
            for k in [1, 3, 5] {
                for rep in 0..2 {
                    seed += 1;
                    let case = random_case(seed, stride, groups_mode, k);
                    let err = max_abs_diff(&case, rep == 1);
                    if err > 1e-6 {
                        eprintln!("stride {stride} groups {} k {k}: max diff {err:e}", case.cfg.groups);
                    }
                    worst = worst.max(err);
                    cases += 1;
                }
            }
        }
    }
    (cases, worst)
}
