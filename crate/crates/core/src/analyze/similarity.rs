//! Channel-by-channel similarity between two activation tensors.

use crate::analyze::taxonomy::centered_cosine;
use crate::arch::Model;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows×cols`.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// For each row channel, the best-matching column and its similarity.
    pub fn best_matches(&self) -> Vec<(usize, f64)> {
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| (j, self.at(i, j)))
                    .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            })
            .collect()
    }

    pub fn mean_best(&self) -> f64 {
        let b = self.best_matches();
        b.iter().map(|m| m.1).sum::<f64>() / b.len().max(1) as f64
    }

    pub fn mean_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len().max(1) as f64
    }
}

fn avg_pool(t: &Tensor<f32>, factor: usize) -> Tensor<f32> {
    let s = t.shape();
    let out = Shape::new(s.n, s.c, s.h / factor, s.w / factor);
    Tensor::from_fn(out, |n, c, y, x| {
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += t.at(n, c, y * factor + dy, x * factor + dx);
            }
        }
        acc / (factor * factor) as f32
    })
}

/// Pools the larger map down to the smaller one by an integer factor.
fn match_sizes(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n {
        return Err(Error::dim(format!("batch sizes differ: {sa} vs {sb}")));
    }
    let fits = |big: Shape, small: Shape| {
        small.h > 0 && big.h.is_multiple_of(small.h) && big.w.is_multiple_of(small.w) && big.h / small.h == big.w / small.w
    };
    if sa.h == sb.h && sa.w == sb.w {
        Ok((a.clone(), b.clone()))
    } else if fits(sa, sb) {
        Ok((avg_pool(a, sa.h / sb.h), b.clone()))
    } else if fits(sb, sa) {
        Ok((a.clone(), avg_pool(b, sb.h / sa.h)))
    } else {
        Err(Error::dim(format!("cannot pool {sa} and {sb} to a common size")))
    }
}

fn channel_vectors(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let s = t.shape();
    (0..s.c)
        .map(|c| (0..s.n).flat_map(|n| t.channel(n, c).iter().map(|&v| v as f64)).collect())
        .collect()
}

/// Centred cosine similarity of every channel pair, each channel flattened
/// over batch and space. Flat channels score 0.
pub fn feature_similarity(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<SimilarityMatrix> {
    let (a, b) = match_sizes(a, b)?;
    let (va, vb) = (channel_vectors(&a), channel_vectors(&b));
    let values = va
        .iter()
        .flat_map(|x| vb.iter().map(move |y| centered_cosine(x, y)))
        .collect();
    Ok(SimilarityMatrix {
        rows: va.len(),
        cols: vb.len(),
        values,
    })
}

/// Similarity between two named layer outputs; `name:in` selects a
/// layer's input instead.
pub fn layer_similarity(model: &Model, x: &Tensor<f32>, first: &str, second: &str) -> Result<SimilarityMatrix> {
    let trace = model.forward_trace(x)?;
    let find = |spec: &str| -> Result<Tensor<f32>> {
        let (name, input) = match spec.strip_suffix(":in") {
            Some(n) => (n, true),
            None => (spec, false),
        };
        let i = trace
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::arg(format!("no layer named {name:?}")))?;
        Ok(match (input, i) {
            (false, _) => trace[i].1.clone(),
            (true, 0) => x.clone(),
            (true, _) => trace[i - 1].1.clone(),
        })
    };
    feature_similarity(&find(first)?, &find(second)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_similarity_diagonal_is_one() {
        let t = Tensor::<f32>::randn(Shape::new(2, 5, 4, 4), 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let m = feature_similarity(&t, &t).unwrap();
        for i in 0..5 {
            assert_eq!(m.at(i, i), 1.0);
        }
        assert_eq!(m.mean_best(), 1.0);
    }

    #[test]
    fn flat_channel_scores_zero() {
        let t = Tensor::<f32>::full(Shape::new(1, 2, 3, 3), 4.0);
        let m = feature_similarity(&t, &t).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn larger_map_is_pooled() {
        let a = Tensor::<f32>::randn(Shape::new(1, 3, 8, 8), 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let b = avg_pool(&a, 2);
        let m = feature_similarity(&a, &b).unwrap();
        assert!((m.at(1, 1) - 1.0).abs() < 1e-6);
        assert!(feature_similarity(&a, &Tensor::zeros(Shape::new(1, 3, 3, 3))).is_err());
    }
}
