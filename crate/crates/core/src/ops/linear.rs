use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Affine map over an `N×C` input (trailing unit dims ignored):
/// `y = x·Wᵀ + b` with `W` stored `C_out×C`.
pub fn linear<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    let (n, c) = as_matrix(input)?;
    let (c_out, c_in) = (weight.shape().n, weight.shape().sample());
    if c_in != c {
        return Err(Error::dim(format!(
            "linear weight {} expects {c_in} features, input has {c}",
            weight.shape()
        )));
    }
    let mut out = Tensor::zeros(Shape::matrix(n, c_out));
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::dim(format!("bias length {} for {c_out} outputs", b.len())));
        }
        for row in out.data_mut().chunks_mut(c_out.max(1)) {
            row.copy_from_slice(b);
        }
    }
    T::gemm(
        n,
        c,
        c_out,
        T::one(),
        input.data(),
        (c, 1),
        weight.data(),
        (1, c),
        T::one(),
        out.data_mut(),
        (c_out, 1),
    );
    out.ensure_finite("linear")
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, c) = as_matrix(input)?;
    let c_out = weight.shape().n;
    if grad_out.shape() != Shape::matrix(n, c_out) {
        return Err(Error::dim(format!(
            "linear grad {} for output {n}x{c_out}",
            grad_out.shape()
        )));
    }
    let mut g_in = Tensor::zeros(input.shape());
    T::gemm(
        n,
        c_out,
        c,
        T::one(),
        grad_out.data(),
        (c_out, 1),
        weight.data(),
        (c, 1),
        T::zero(),
        g_in.data_mut(),
        (c, 1),
    );
    let mut g_w = Tensor::zeros(weight.shape());
    T::gemm(
        c_out,
        n,
        c,
        T::one(),
        grad_out.data(),
        (1, c_out),
        input.data(),
        (c, 1),
        T::zero(),
        g_w.data_mut(),
        (c, 1),
    );
    let mut g_b = vec![T::zero(); c_out];
    for row in grad_out.data().chunks(c_out.max(1)) {
        g_b.iter_mut().zip(row).for_each(|(b, &g)| *b += g);
    }
    Ok(LinearGrads {
        input: g_in.ensure_finite("linear_backward")?,
        weight: g_w.ensure_finite("linear_backward")?,
        bias: g_b,
    })
}

fn as_matrix<T: Element>(t: &Tensor<T>) -> Result<(usize, usize)> {
    let s = t.shape();
    Ok((s.n, s.sample()))
}
