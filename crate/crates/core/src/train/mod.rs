//! Desk-scale training: SGD with momentum, warmup plus cosine schedule,
//! label smoothing, and the datasets it runs on.

pub mod data;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use data::{
    augment, decode_cifar, encode_cifar, load_cifar, synthetic_edges, synthetic_gaussian_blobs, Dataset, DatasetKind,
    EdgeParams, Normalization, Split,
};
pub use optim::{sgd_step, OptimizerState, SgdConfig};
pub use schedule::LrSchedule;
pub use trainer::{evaluate, top_k_correct, train, EpochRecord, EvalMetrics, TrainConfig};
