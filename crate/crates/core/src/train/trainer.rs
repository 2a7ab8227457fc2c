use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::Model;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::ops::softmax_cross_entropy;
use crate::tensor::Tensor;

use super::data::{augment, shuffled, Dataset};
use super::optim::{sgd_step, OptimizerState, SgdConfig};
use super::schedule::LrSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub sgd: SgdConfig,
    pub label_smoothing: f64,
    pub augment: bool,
    pub crop_pad: usize,
    pub seed: u64,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    /// 32² runs on a workstation.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            base_lr: 0.05,
            warmup_epochs: 1,
            sgd: SgdConfig::default(),
            label_smoothing: 0.1,
            augment: true,
            crop_pad: 4,
            seed: 0,
            checkpoint: None,
        }
    }

    /// The full ImageNet recipe, for hardware that can run it.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 512,
            base_lr: 0.2,
            warmup_epochs: 5,
            augment: false,
            ..Self::desk()
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("epochs", self.epochs);
        kv.push("batch_size", self.batch_size);
        kv.push("base_lr", self.base_lr);
        kv.push("warmup_epochs", self.warmup_epochs);
        kv.push("momentum", self.sgd.momentum);
        kv.push("weight_decay", self.sgd.weight_decay);
        kv.push("label_smoothing", self.label_smoothing);
        kv.push("augment", self.augment);
        kv.push("seed", self.seed);
        kv
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub eval: Option<EvalMetrics>,
    pub wall_seconds: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={:.6} train_loss={:.6} train_top1={:.4}",
            self.epoch, self.lr, self.train_loss, self.train_top1
        )?;
        match self.eval {
            Some(e) => write!(f, " eval_top1={:.4} eval_top5={:.4}", e.top1, e.top5)?,
            None => write!(f, " eval_top1=na eval_top5=na")?,
        }
        write!(f, " wall_seconds={:.3}", self.wall_seconds)
    }
}

/// Samples whose target logit is beaten by fewer than `k` others.
pub fn top_k_correct(logits: &Tensor<f32>, labels: &[usize], k: usize) -> usize {
    let classes = logits.shape().sample();
    labels
        .iter()
        .enumerate()
        .filter(|&(n, &y)| {
            let row = &logits.data()[n * classes..(n + 1) * classes];
            row.iter().filter(|&&v| v > row[y]).count() < k
        })
        .count()
}

/// Eval-mode accuracy and unsmoothed cross-entropy over the whole set.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let (mut c1, mut c5, mut loss) = (0, 0, 0.0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let logits = model.forward(&x)?;
        c1 += top_k_correct(&logits, &y, 1);
        c5 += top_k_correct(&logits, &y, 5);
        loss += softmax_cross_entropy(&logits, &y, 0.0)?.0 as f64 * chunk.len() as f64;
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        top1: c1 as f64 / n,
        top5: c5 as f64 / n,
        loss: loss / n,
    })
}

/// Turns numeric failures inside a step into a divergence report.
fn at_step<V>(step: usize, r: Result<V>) -> Result<V> {
    r.map_err(|e| match e {
        Error::Numeric { .. } => Error::Diverged { step, loss: f64::NAN },
        other => other,
    })
}

/// Runs SGD for `config.epochs` epochs, calling `on_epoch` after each one.
/// Batches are drawn from a seeded shuffle and the trailing partial batch is
/// dropped, so identical seeds and thread counts give identical weights.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    let res = model.spec().options.input_resolution;
    if train_set.resolution() != res || eval_set.is_some_and(|e| e.resolution() != res) {
        return Err(Error::dim(format!(
            "model expects {res}x{res} inputs, dataset has {}x{}",
            train_set.resolution(),
            train_set.resolution()
        )));
    }
    if train_set.num_classes > model.spec().options.num_classes {
        return Err(Error::arg(format!(
            "dataset has {} classes, model only {}",
            train_set.num_classes,
            model.spec().options.num_classes
        )));
    }
    if train_set.is_empty() || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::arg("training needs data, a positive batch size and at least one epoch"));
    }
    let batch = config.batch_size.min(train_set.len());
    let steps_per_epoch = train_set.len() / batch;
    let schedule = LrSchedule {
        base_lr: config.base_lr,
        warmup_epochs: config.warmup_epochs,
        total_epochs: config.epochs,
        steps_per_epoch,
    };
    let mut state = OptimizerState::new(model.params(), config.sgd);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let order = shuffled(train_set.len(), &mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        let mut lr = 0.0;
        for idx in order.chunks_exact(batch) {
            lr = schedule.lr_at(step)?;
            let (mut x, y) = train_set.batch(idx);
            if config.augment {
                augment(&mut x, config.crop_pad, &mut rng);
            }
            model.zero_grad();
            let (logits, tape) = at_step(step, model.forward_train(&x))?;
            let (loss, grad) = at_step(step, softmax_cross_entropy(&logits, &y, config.label_smoothing))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss: loss as f64 });
            }
            at_step(step, model.backward(tape, &grad))?;
            at_step(step, sgd_step(model.params_mut(), &mut state, lr))?;
            loss_sum += loss as f64 * y.len() as f64;
            correct += top_k_correct(&logits, &y, 1);
            seen += y.len();
            step += 1;
        }
        let eval = eval_set.map(|e| evaluate(model, e, batch)).transpose()?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_top1: correct as f64 / seen as f64,
            eval,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(path) = &config.checkpoint {
            let provenance: Vec<(String, String)> = config
                .to_key_values()
                .entries()
                .iter()
                .cloned()
                .chain([("epoch".to_string(), epoch.to_string())])
                .collect();
            model.save(path, &provenance)?;
        }
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}
