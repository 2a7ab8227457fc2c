//! Layer primitives with hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{activation, activation_backward, sigmoid, Activation};
pub use conv::{conv2d_backward, conv2d_forward, depthwise, Conv2dConfig, Conv2dGrads};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::softmax_cross_entropy;
pub use norm::{batchnorm, batchnorm_backward, batchnorm_eval, batchnorm_train, Mode, RunningStats};
pub use pool::{global_avg_pool, global_avg_pool_backward, scale_channels, scale_channels_backward};
