//! Width scaling to a parameter budget, and the SE reduction-ratio fit.

use crate::error::{Error, Result};

use super::params::ParamReport;
use super::spec::{BlockKind, Layout, ModelSpec, SpecOptions, Variant};

/// Calibrated counts may overshoot the budget by at most this fraction.
pub const OVERSHOOT: f64 = 0.01;
/// A template already within `[1 − UNDERSHOOT, 1 + OVERSHOOT]·budget` is kept.
pub const UNDERSHOOT: f64 = 0.02;
pub const MIN_BUDGET: f64 = 0.5e6;

/// Learnable count of VGNetG-1.0MP+SE reported for the SE configuration.
pub const SE_TARGET_PARAMS: usize = 1_143_000;

#[derive(Clone, Debug)]
pub struct Calibration {
    pub multiplier: f64,
    pub spec: ModelSpec,
    pub learnable: usize,
}

impl Layout {
    /// Recovers the width/depth template a spec was built from.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let mut layout = Layout {
            stem_channels: 0,
            stem_stride: 1,
            stages: Vec::new(),
            shared_t: 1,
            head_channels: 0,
        };
        for b in &spec.blocks {
            match b.kind {
                BlockKind::Stem => {
                    layout.stem_channels = b.out_channels;
                    layout.stem_stride = b.stride;
                }
                BlockKind::Downsampling => layout.stages.push((b.out_channels, 0)),
                BlockKind::HalfIdentity => match layout.stages.last_mut() {
                    Some(stage) if stage.0 == b.in_channels => stage.1 += b.repeats,
                    _ => return Err(Error::spec("half-identity block without a preceding downsampling stage")),
                },
                BlockKind::SharedDw => layout.shared_t = b.t,
                BlockKind::PointwiseBlock => layout.head_channels = b.out_channels,
                BlockKind::AvgPool | BlockKind::Classifier => {}
            }
        }
        Ok(layout)
    }
}

fn learnable_at(layout: &Layout, multiplier: f64, variant: Variant, options: &SpecOptions) -> Result<(ModelSpec, usize)> {
    let spec = ModelSpec::from_layout(&layout.scaled(multiplier), variant, options.clone())?;
    let count = ParamReport::from_spec(&spec)?.learnable;
    Ok((spec, count))
}

/// Scales every width of `template` by one multiplier so the learnable
/// count is the largest value not above `budget·(1 + OVERSHOOT)`. Depths
/// are unchanged.
pub fn calibrate_width(budget: f64, template: &ModelSpec) -> Result<Calibration> {
    if !(budget >= MIN_BUDGET) {
        return Err(Error::arg(format!("budget {budget} below minimum {MIN_BUDGET}")));
    }
    let layout = Layout::from_spec(template)?;
    let (variant, options) = (template.variant, &template.options);
    let limit = budget * (1.0 + OVERSHOOT);

    let current = ParamReport::from_spec(template)?.learnable;
    if (budget * (1.0 - UNDERSHOOT)..=limit).contains(&(current as f64)) {
        return Ok(Calibration {
            multiplier: 1.0,
            spec: template.clone(),
            learnable: current,
        });
    }

    let fits = |m: f64| -> Result<bool> { Ok(learnable_at(&layout, m, variant, options)?.1 as f64 <= limit) };
    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    while !fits(lo)? {
        lo /= 2.0;
        if lo < 1e-3 {
            return Err(Error::Calibration(format!(
                "budget {budget} is below the minimum-width network"
            )));
        }
    }
    while fits(hi)? {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Calibration(format!("budget {budget} is unreachable")));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (spec, learnable) = learnable_at(&layout, lo, variant, options)?;
    Ok(Calibration {
        multiplier: lo,
        spec,
        learnable,
    })
}

/// Reduction ratio in `1..=max_r` whose VGNetG+SE learnable count is closest
/// to `target`.
pub fn calibrate_se_reduction(target: usize, max_r: usize) -> Result<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for r in 1..=max_r {
        let options = SpecOptions {
            use_se: true,
            se_reduction: r,
            ..SpecOptions::default()
        };
        let spec = ModelSpec::from_layout(&Layout::imagenet(), Variant::G, options)?;
        let count = ParamReport::from_spec(&spec)?.learnable;
        if best.is_none_or(|(_, c)| count.abs_diff(target) < c.abs_diff(target)) {
            best = Some((r, count));
        }
    }
    best.ok_or_else(|| Error::arg("max_r must be at least 1"))
}
