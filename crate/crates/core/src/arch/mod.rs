//! VGNet construction: stage tables, blocks, variants and parameter budgets.

mod build;
pub mod calibrate;
mod model;
mod params;
pub mod spec;

pub use build::{se_hidden, NamedLayer};
pub use calibrate::{calibrate_se_reduction, calibrate_width, Calibration};
pub use model::{Model, Tape, BN_MOMENTUM};
pub use params::{ParamReport, ParamRow};
pub use spec::{BlockKind, BlockSpec, DwPolicy, Layout, ModelSpec, SpecOptions, Variant};
