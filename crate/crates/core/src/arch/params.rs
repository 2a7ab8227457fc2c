use std::fmt::Write as _;

use crate::error::Result;
use crate::tensor::{Element, Parameter};

use super::build;
use super::spec::ModelSpec;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRow {
    pub name: String,
    pub dims: Vec<usize>,
    pub count: usize,
    pub learnable: bool,
    pub fixed_kernel: bool,
    pub decay_exempt: bool,
}

/// Per-tensor parameter accounting. Fixed kernels are listed but excluded
/// from the learnable total; batch-norm running statistics are not
/// parameters and do not appear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub rows: Vec<ParamRow>,
    pub learnable: usize,
    pub fixed: usize,
}

impl ParamReport {
    pub fn from_params<T: Element>(params: &[Parameter<T>]) -> Self {
        Self::from_rows(
            params
                .iter()
                .map(|p| ParamRow {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    count: p.numel(),
                    learnable: p.learnable,
                    fixed_kernel: p.fixed_kernel,
                    decay_exempt: p.decay_exempt,
                })
                .collect(),
        )
    }

    /// Counts straight from the spec without allocating weights.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let plan = build::plan(spec)?;
        Ok(Self::from_rows(
            plan.params
                .into_iter()
                .map(|d| ParamRow {
                    count: d.dims.iter().product(),
                    name: d.name,
                    dims: d.dims,
                    learnable: d.flags.learnable,
                    fixed_kernel: d.flags.fixed_kernel,
                    decay_exempt: d.flags.decay_exempt,
                })
                .collect(),
        ))
    }

    fn from_rows(rows: Vec<ParamRow>) -> Self {
        let learnable = rows.iter().filter(|r| r.learnable).map(|r| r.count).sum();
        let fixed = rows.iter().filter(|r| r.fixed_kernel).map(|r| r.count).sum();
        ParamReport { rows, learnable, fixed }
    }

    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    /// Sum over rows whose name matches `pred`, split `(learnable, fixed)`.
    pub fn sum_where(&self, pred: impl Fn(&ParamRow) -> bool) -> (usize, usize) {
        self.rows.iter().filter(|r| pred(r)).fold((0, 0), |(l, f), r| {
            if r.learnable {
                (l + r.count, f)
            } else if r.fixed_kernel {
                (l, f + r.count)
            } else {
                (l, f)
            }
        })
    }

    pub fn depthwise_learnable(&self) -> usize {
        self.sum_where(|r| r.name.ends_with(".dw.weight")).0
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(s, "{:<width$}  {:<16} {:>9}  flags", "name", "shape", "count");
        for r in &self.rows {
            let dims = r.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let mut flags = Vec::new();
            if r.learnable {
                flags.push("learnable");
            }
            if r.fixed_kernel {
                flags.push("fixed");
            }
            if r.decay_exempt {
                flags.push("no-decay");
            }
            let _ = writeln!(s, "{:<width$}  {:<16} {:>9}  {}", r.name, dims, r.count, flags.join(","));
        }
        let _ = writeln!(s, "learnable parameters: {}", self.learnable);
        let _ = writeln!(s, "fixed kernel parameters: {}", self.fixed);
        s
    }
}
