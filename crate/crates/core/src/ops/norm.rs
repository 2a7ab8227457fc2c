//! Per-channel batch normalization.
//!
//! Running statistics follow the exponential moving average
//! `running ← momentum·running + (1 − momentum)·batch`; the running variance
//! tracks the unbiased batch variance.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Saved activations for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Batch statistics measured during a training forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (`n − 1`) variance, for the running estimate.
    pub var_unbiased: Vec<T>,
}

fn check_affine<T: Element>(input: &Tensor<T>, scale: &[T], shift: &[T]) -> Result<()> {
    let c = input.shape().c;
    if scale.len() != c || shift.len() != c {
        return Err(Error::dim(format!(
            "batchnorm over {c} channels got scale {} / shift {}",
            scale.len(),
            shift.len()
        )));
    }
    Ok(())
}

/// Normalizes with batch statistics.
pub fn batchnorm_train<T: Element>(
    input: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchStats<T>)> {
    check_affine(input, scale, shift)?;
    let s = input.shape();
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut mean = Vec::with_capacity(s.c);
    let mut var = Vec::with_capacity(s.c);
    let mut var_unbiased = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut sum = 0.0f64;
        for n in 0..s.n {
            sum += input.channel(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            sq += input
                .channel(n, c)
                .iter()
                .map(|v| (v.as_f64() - m).powi(2))
                .sum::<f64>();
        }
        mean.push(m);
        var.push(sq / count);
        var_unbiased.push(if count > 1.0 { sq / (count - 1.0) } else { 0.0 });
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();

    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    {
        let xd = input.data();
        let (hd, od) = (xhat.data_mut(), out.data_mut());
        for n in 0..s.n {
            for c in 0..s.c {
                let start = (n * s.c + c) * plane;
                let (m, is, g, b) = (mean_t[c], inv_std[c], scale[c], shift[c]);
                for i in start..start + plane {
                    let h = (xd[i] - m) * is;
                    hd[i] = h;
                    od[i] = h * g + b;
                }
            }
        }
    }
    let stats = BatchStats {
        mean: mean_t,
        var_unbiased: var_unbiased.into_iter().map(T::of).collect(),
    };
    Ok((
        out.ensure_finite("batchnorm")?,
        BatchNormCache { xhat, inv_std },
        stats,
    ))
}

pub fn update_running<T: Element>(running: &mut RunningStats<T>, batch: &BatchStats<T>, momentum: f64) {
    let (keep, take) = (T::of(momentum), T::of(1.0 - momentum));
    for (r, &b) in running.mean.iter_mut().zip(&batch.mean) {
        *r = keep * *r + take * b;
    }
    for (r, &b) in running.var.iter_mut().zip(&batch.var_unbiased) {
        *r = keep * *r + take * b;
    }
}

/// Normalizes with the running statistics.
pub fn batchnorm_eval<T: Element>(
    input: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    mean: &[T],
    var: &[T],
    eps: f64,
) -> Result<Tensor<T>> {
    check_affine(input, scale, shift)?;
    let s = input.shape();
    let plane = s.plane();
    let mut out = input.clone();
    let coef: Vec<(T, T)> = (0..s.c)
        .map(|c| {
            let a = scale[c] / (var[c] + T::of(eps)).sqrt();
            (a, shift[c] - a * mean[c])
        })
        .collect();
    for (i, chunk) in out.data_mut().chunks_mut(plane.max(1)).enumerate() {
        let (a, b) = coef[i % s.c];
        chunk.iter_mut().for_each(|v| *v = *v * a + b);
    }
    out.ensure_finite("batchnorm")
}

/// Full op: training mode normalizes with batch statistics and folds them
/// into `running`; eval mode reads `running`.
pub fn batchnorm<T: Element>(
    input: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    running: &mut RunningStats<T>,
    momentum: f64,
    eps: f64,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    match mode {
        Mode::Train => {
            let (out, cache, stats) = batchnorm_train(input, scale, shift, eps)?;
            update_running(running, &stats, momentum);
            Ok((out, Some(cache)))
        }
        Mode::Eval => Ok((
            batchnorm_eval(input, scale, shift, &running.mean, &running.var, eps)?,
            None,
        )),
    }
}

/// Returns `(grad_input, grad_scale, grad_shift)`.
pub fn batchnorm_backward<T: Element>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    scale: &[T],
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s = grad_out.shape();
    if s != cache.xhat.shape() {
        return Err(Error::dim(format!(
            "grad_out {s} does not match batchnorm input {}",
            cache.xhat.shape()
        )));
    }
    let plane = s.plane();
    let count = T::of((s.n * plane) as f64);
    let mut g_scale = vec![T::zero(); s.c];
    let mut g_shift = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let (go, xh) = (grad_out.channel(n, c), cache.xhat.channel(n, c));
            let (mut a, mut b) = (T::zero(), T::zero());
            for (&g, &h) in go.iter().zip(xh) {
                a += g * h;
                b += g;
            }
            g_scale[c] += a;
            g_shift[c] += b;
        }
    }
    let mut grad_in = Tensor::zeros(s);
    {
        let (gd, hd, go) = (grad_in.data_mut(), cache.xhat.data(), grad_out.data());
        for n in 0..s.n {
            for c in 0..s.c {
                let start = (n * s.c + c) * plane;
                let k = scale[c] * cache.inv_std[c] / count;
                let (sum_g, sum_gh) = (g_shift[c], g_scale[c]);
                for i in start..start + plane {
                    gd[i] = k * (count * go[i] - sum_g - hd[i] * sum_gh);
                }
            }
        }
    }
    Ok((grad_in.ensure_finite("batchnorm_backward")?, g_scale, g_shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::<f32>::full(Shape::new(2, 3, 4, 4), 3.5);
        let (y, _, _) = batchnorm_train(&x, &[1.0; 3], &[0.0; 3], DEFAULT_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shift_sets_channel_mean() {
        let mut rng = rand::rng();
        let x = Tensor::<f64>::randn(Shape::new(4, 2, 5, 5), 1.0, &mut rng);
        let (y, _, _) = batchnorm_train(&x, &[1.0; 2], &[5.0; 2], DEFAULT_EPS).unwrap();
        for c in 0..2 {
            let mean: f64 = (0..4).flat_map(|n| y.channel(n, c).to_vec()).sum::<f64>() / 100.0;
            assert!((mean - 5.0).abs() < 1e-9, "channel {c} mean {mean}");
        }
    }

    #[test]
    fn running_stats_use_momentum() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 1, 2), |_, _, _, x| x as f64 * 2.0);
        let mut running = RunningStats::new(1);
        batchnorm(&x, &[1.0], &[0.0], &mut running, 0.9, DEFAULT_EPS, Mode::Train).unwrap();
        // batch mean 1, unbiased variance 2
        assert!((running.mean[0] - 0.1).abs() < 1e-12);
        assert!((running.var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 3.0);
        let mut running = RunningStats {
            mean: vec![1.0],
            var: vec![4.0 - DEFAULT_EPS as f32],
        };
        let (y, cache) = batchnorm(&x, &[2.0], &[0.5], &mut running, 0.9, DEFAULT_EPS, Mode::Eval).unwrap();
        assert!(cache.is_none());
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
        assert_eq!(running.mean, vec![1.0]);
    }
}
