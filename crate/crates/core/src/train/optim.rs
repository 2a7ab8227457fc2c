//! SGD with momentum and decoupled-from-exemptions weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Element, Parameter};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// When false every learnable tensor is decayed, exemptions included.
    /// Only useful as a control.
    pub honor_exemptions: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
            honor_exemptions: true,
        }
    }
}

/// Momentum buffers, one per learnable parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: SgdConfig,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(params: &[Parameter<T>], config: SgdConfig) -> Self {
        let velocity = params
            .iter()
            .map(|p| p.learnable.then(|| vec![T::zero(); p.numel()]))
            .collect();
        OptimizerState { config, velocity }
    }

    pub fn velocity(&self, index: usize) -> Option<&[T]> {
        self.velocity.get(index)?.as_deref()
    }

    pub fn buffer_count(&self) -> usize {
        self.velocity.iter().flatten().count()
    }
}

/// `v ← μ·v + g + wd·w` (decay dropped for exempt tensors), `w ← w − lr·v`.
/// Every gradient is checked before any weight moves, so a bad step leaves
/// the model untouched.
pub fn sgd_step<T: Element>(params: &mut [Parameter<T>], state: &mut OptimizerState<T>, lr: f64) -> Result<()> {
    if params.len() != state.velocity.len() {
        return Err(Error::arg(format!(
            "optimizer tracks {} tensors, model has {}",
            state.velocity.len(),
            params.len()
        )));
    }
    for p in params.iter().filter(|p| p.learnable) {
        if p.tensor.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric { op: "sgd_step" });
        }
    }
    let cfg = state.config;
    let (mu, lr) = (T::of(cfg.momentum), T::of(lr));
    for (p, v) in params.iter_mut().zip(&mut state.velocity) {
        let Some(v) = v else { continue };
        let decay = if p.decay_exempt && cfg.honor_exemptions {
            T::zero()
        } else {
            T::of(cfg.weight_decay)
        };
        let Parameter { tensor, .. } = p;
        let grad = tensor.grad().map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); v.len()]);
        for ((w, vi), g) in tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
            *vi = mu * *vi + g + decay * *w;
            *w = *w - lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamFlags, Shape, Tensor};

    fn param(flags: ParamFlags, w: f32, g: f32) -> Parameter<f32> {
        let mut p = Parameter::new("p", vec![1], Tensor::full(Shape::matrix(1, 1), w), flags).unwrap();
        if flags.learnable {
            p.tensor.grad_mut()[0] = g;
        }
        p
    }

    #[test]
    fn first_step_formula() {
        let mut ps = vec![param(ParamFlags::WEIGHT, 2.0, 0.5)];
        let mut st = OptimizerState::new(&ps, SgdConfig::default());
        sgd_step(&mut ps, &mut st, 0.1).unwrap();
        let expect = 2.0 - 0.1 * (0.5 + 1e-4 * 2.0);
        assert!((ps[0].tensor.data()[0] - expect).abs() < 1e-7);
    }

    #[test]
    fn exempt_tensor_ignores_decay() {
        let mut ps = vec![param(ParamFlags::EXEMPT, 2.0, 0.5)];
        let mut st = OptimizerState::new(&ps, SgdConfig::default());
        sgd_step(&mut ps, &mut st, 0.1).unwrap();
        assert_eq!(ps[0].tensor.data()[0], 2.0 - 0.1 * 0.5);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut ps = vec![param(ParamFlags::WEIGHT, 3.0, 0.0)];
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut st = OptimizerState::new(&ps, cfg);
        sgd_step(&mut ps, &mut st, 0.5).unwrap();
        assert_eq!(ps[0].tensor.data()[0], 3.0);
    }

    #[test]
    fn fixed_kernels_get_no_buffer_and_never_move() {
        let mut ps = vec![param(ParamFlags::FIXED_KERNEL, 1.0, 0.0), param(ParamFlags::WEIGHT, 1.0, 1.0)];
        let mut st = OptimizerState::new(&ps, SgdConfig::default());
        assert_eq!(st.buffer_count(), 1);
        assert!(st.velocity(0).is_none());
        sgd_step(&mut ps, &mut st, 1.0).unwrap();
        assert_eq!(ps[0].tensor.data()[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_aborts_before_updating() {
        let mut ps = vec![param(ParamFlags::WEIGHT, 1.0, 1.0), param(ParamFlags::WEIGHT, 1.0, f32::NAN)];
        let mut st = OptimizerState::new(&ps, SgdConfig::default());
        assert!(matches!(sgd_step(&mut ps, &mut st, 1.0), Err(Error::Numeric { .. })));
        assert_eq!(ps[0].tensor.data()[0], 1.0);
    }
}
