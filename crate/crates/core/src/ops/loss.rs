use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Label-smoothed softmax cross-entropy averaged over the batch.
///
/// Targets are `q = (1 − ε)·onehot + ε/K`; the returned gradient is
/// `(softmax − q)/N` so it is already the gradient of the mean loss.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    targets: &[usize],
    smoothing: f64,
) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    let (n, k) = (s.n, s.sample());
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::arg(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    if targets.len() != n {
        return Err(Error::dim(format!("{} targets for batch of {n}", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::arg(format!("target {t} out of range for {k} classes")));
    }
    let off = smoothing / k as f64;
    let on = 1.0 - smoothing + off;
    let inv_n = 1.0 / n as f64;
    let mut grad = Tensor::zeros(Shape::matrix(n, k));
    let mut total = 0.0f64;
    for (i, (row, &t)) in logits.data().chunks(k).zip(targets).enumerate() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let sum_exp: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, v) in row.iter().enumerate() {
            let logp = v.as_f64() - log_z;
            let q = if j == t { on } else { off };
            total -= q * logp;
            g[j] = T::of((logp.exp() - q) * inv_n);
        }
    }
    let loss = total * inv_n;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            op: "softmax_cross_entropy",
        });
    }
    Ok((T::of(loss), grad))
}
