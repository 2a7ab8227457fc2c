//! Parameter-efficient CNNs built from depthwise separable blocks whose
//! depthwise kernels can be fixed Gaussian blurs or edge detectors.
//!
//! The crate covers the tensor ops with hand-written backward passes, the
//! fixed kernel banks, model construction and parameter accounting, an SGD
//! training loop, kernel-taxonomy analysis, and a binary checkpoint format.

pub mod analyze;
pub mod arch;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod kernels;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Parameter, Shape, Tensor};
