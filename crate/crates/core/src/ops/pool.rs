use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Per-channel spatial mean, `N×C×H×W → N×C×1×1`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::dim(format!("cannot pool empty spatial extent {s}")));
    }
    let count = T::of(s.plane() as f64);
    let data = input
        .data()
        .chunks(s.plane())
        .map(|ch| ch.iter().copied().sum::<T>() / count)
        .collect();
    Tensor::new(Shape::matrix(s.n, s.c), data)
}

/// Spreads each pooled gradient uniformly over its `H·W` window.
pub fn global_avg_pool_backward<T: Element>(grad_out: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
    let g = grad_out.shape();
    if g.n != input_shape.n || g.c != input_shape.c || g.plane() != 1 {
        return Err(Error::dim(format!(
            "pool grad {g} does not match input {input_shape}"
        )));
    }
    let plane = input_shape.plane();
    let count = T::of(plane as f64);
    let mut data = Vec::with_capacity(input_shape.numel());
    for &v in grad_out.data() {
        data.extend(std::iter::repeat_n(v / count, plane));
    }
    Tensor::new(input_shape, data)
}

/// Multiplies each channel plane by `gate[n, c]` (gate is `N×C×1×1`).
pub fn scale_channels<T: Element>(input: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if gate.shape() != Shape::matrix(s.n, s.c) {
        return Err(Error::dim(format!("gate {} for input {s}", gate.shape())));
    }
    let mut out = input.clone();
    for (ch, &g) in out.data_mut().chunks_mut(s.plane().max(1)).zip(gate.data()) {
        ch.iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}

/// Returns `(grad_input, grad_gate)`.
pub fn scale_channels_backward<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    gate: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let grad_in = scale_channels(grad_out, gate)?;
    let s = input.shape();
    let plane = s.plane().max(1);
    let g_gate = grad_out
        .data()
        .chunks(plane)
        .zip(input.data().chunks(plane))
        .map(|(g, x)| g.iter().zip(x).map(|(&a, &b)| a * b).sum())
        .collect();
    Ok((grad_in, Tensor::new(Shape::matrix(s.n, s.c), g_gate)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_pools_to_itself() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 3, 5), 7.0);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn two_by_two_mean() {
        let x = Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn backward_splits_uniformly() {
        let g = Tensor::<f64>::new(Shape::matrix(1, 2), vec![4.0, -8.0]).unwrap();
        let gi = global_avg_pool_backward(&g, Shape::new(1, 2, 2, 2)).unwrap();
        assert_eq!(gi.data(), &[1., 1., 1., 1., -2., -2., -2., -2.]);
    }
}
