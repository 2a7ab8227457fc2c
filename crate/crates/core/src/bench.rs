//! Forward-pass latency measurement.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::Model;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MIN_ITERS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub model: String,
    pub batch: usize,
    pub threads: usize,
    pub warmup: usize,
    pub iters: usize,
    pub times_ms: Vec<f64>,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub images_per_sec: f64,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl BenchResult {
    fn from_times(model: String, batch: usize, threads: usize, warmup: usize, times_ms: Vec<f64>) -> Self {
        let mut sorted = times_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        BenchResult {
            model,
            batch,
            threads,
            warmup,
            iters: n,
            median_ms,
            p10_ms: percentile(&sorted, 10.0),
            p90_ms: percentile(&sorted, 90.0),
            images_per_sec: batch as f64 / (median_ms / 1e3),
            times_ms,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "model={} batch={} threads={} iters={} median_ms={:.3} p10_ms={:.3} p90_ms={:.3} images_per_sec={:.1}",
            self.model, self.batch, self.threads, self.iters, self.median_ms, self.p10_ms, self.p90_ms, self.images_per_sec
        )
    }
}

/// Times `iters` eval-mode forward passes on random input after `warmup`
/// untimed ones, inside a pool of `threads` workers.
pub fn bench(model: &Model, label: &str, batch: usize, warmup: usize, iters: usize, threads: usize) -> Result<BenchResult> {
    if iters < MIN_ITERS || batch == 0 || threads == 0 {
        return Err(Error::arg(format!(
            "bench needs batch ≥ 1, threads ≥ 1 and at least {MIN_ITERS} iterations"
        )));
    }
    let res = model.spec().options.input_resolution;
    let x = Tensor::randn(Shape::new(batch, 3, res, res), 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::arg(format!("thread pool: {e}")))?;
    let times = pool.install(|| -> Result<Vec<f64>> {
        for _ in 0..warmup {
            model.forward(&x)?;
        }
        (0..iters)
            .map(|_| {
                let t = Instant::now();
                model.forward(&x)?;
                Ok(t.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    })?;
    Ok(BenchResult::from_times(label.to_string(), batch, threads, warmup, times))
}
