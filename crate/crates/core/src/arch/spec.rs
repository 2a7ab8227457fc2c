//! Declarative model description: a stage table plus global switches.

use std::fmt;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::kernels::{BankVariant, DEFAULT_BANK_SIGMAS};
use crate::ops::conv::output_size;
use crate::ops::Activation;

/// Reduction ratio for squeeze-and-excitation, fixed by
/// [`super::calibrate::calibrate_se_reduction`] against the 1.143M target.
pub const DEFAULT_SE_REDUCTION: usize = 3;
/// Gaussian used by every downsampling depthwise in G/F variants
/// (close to the `[1 2 1]ᵀ[1 2 1]/16` binomial blur).
pub const DEFAULT_DOWNSAMPLE_SIGMA: f64 = 0.85;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    C,
    G,
    F1,
    F2,
    F3,
    F4,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::C, Variant::G, Variant::F1, Variant::F2, Variant::F3, Variant::F4];

    pub fn name(self) -> &'static str {
        match self {
            Variant::C => "c",
            Variant::G => "g",
            Variant::F1 => "f1",
            Variant::F2 => "f2",
            Variant::F3 => "f3",
            Variant::F4 => "f4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
    }

    fn bank(self) -> Option<BankVariant> {
        match self {
            Variant::C | Variant::G => None,
            Variant::F1 | Variant::F2 => Some(BankVariant::Ek6Gk2),
            Variant::F3 | Variant::F4 => Some(BankVariant::Ek4),
        }
    }

    /// Depthwise policy for a block kind under this variant.
    pub fn policy_for(self, kind: BlockKind) -> DwPolicy {
        match kind {
            BlockKind::Downsampling if self != Variant::C => DwPolicy::Gaussian,
            BlockKind::HalfIdentity => self.bank().map_or(DwPolicy::Learnable, DwPolicy::Bank),
            BlockKind::SharedDw => match self {
                Variant::F2 | Variant::F4 => DwPolicy::Bank(self.bank().expect("F variant has a bank")),
                _ => DwPolicy::Learnable,
            },
            _ => DwPolicy::Learnable,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum DwPolicy {
    Learnable,
    Gaussian,
    Bank(BankVariant),
    /// Centre-only kernel: no spatial mixing (ablation control).
    Identity,
}

impl DwPolicy {
    pub fn is_fixed(self) -> bool {
        self != DwPolicy::Learnable
    }

    pub fn name(self) -> String {
        match self {
            DwPolicy::Learnable => "learnable".into(),
            DwPolicy::Gaussian => "gaussian".into(),
            DwPolicy::Bank(b) => format!("bank:{}", b.name()),
            DwPolicy::Identity => "identity".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "learnable" => Some(DwPolicy::Learnable),
            "gaussian" => Some(DwPolicy::Gaussian),
            "identity" => Some(DwPolicy::Identity),
            _ => s
                .strip_prefix("bank:")
                .and_then(BankVariant::parse)
                .map(DwPolicy::Bank),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Stem,
    Downsampling,
    HalfIdentity,
    SharedDw,
    PointwiseBlock,
    AvgPool,
    Classifier,
}

impl BlockKind {
    const NAMES: [(BlockKind, &'static str); 7] = [
        (BlockKind::Stem, "stem"),
        (BlockKind::Downsampling, "downsampling"),
        (BlockKind::HalfIdentity, "half_identity"),
        (BlockKind::SharedDw, "shared_dw"),
        (BlockKind::PointwiseBlock, "pointwise_block"),
        (BlockKind::AvgPool, "avgpool"),
        (BlockKind::Classifier, "classifier"),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(k, _)| *k == self).map(|(_, n)| *n).expect("all kinds named")
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::NAMES.iter().find(|(_, n)| *n == s).map(|(k, _)| *k)
    }

    pub fn has_depthwise(self) -> bool {
        matches!(self, BlockKind::Downsampling | BlockKind::HalfIdentity | BlockKind::SharedDw)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub repeats: usize,
    pub dw_policy: DwPolicy,
    /// Shared-kernel applications (`shared_dw` only, 1 elsewhere).
    pub t: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        BlockSpec {
            kind,
            in_channels,
            out_channels,
            stride,
            repeats: 1,
            dw_policy: DwPolicy::Learnable,
            t: 1,
        }
    }

    fn to_text(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.kind.name(),
            self.in_channels,
            self.out_channels,
            self.stride,
            self.repeats,
            self.dw_policy.name(),
            self.t
        )
    }

    fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::spec(format!("malformed block entry {s:?}"));
        if parts.len() != 7 {
            return Err(bad());
        }
        let num = |i: usize| parts[i].parse::<usize>().map_err(|_| bad());
        Ok(BlockSpec {
            kind: BlockKind::parse(parts[0]).ok_or_else(bad)?,
            in_channels: num(1)?,
            out_channels: num(2)?,
            stride: num(3)?,
            repeats: num(4)?,
            dw_policy: DwPolicy::parse(parts[5]).ok_or_else(bad)?,
            t: num(6)?,
        })
    }
}

/// Width/depth template: stem, then per stage one downsampling block
/// followed by `repeats` half-identity blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub stem_channels: usize,
    pub stem_stride: usize,
    /// `(width, half-identity repeats)` per stage.
    pub stages: Vec<(usize, usize)>,
    pub shared_t: usize,
    /// Output width of the final pointwise block.
    pub head_channels: usize,
}

impl Layout {
    /// The 1.0M-parameter ImageNet network at 224².
    pub fn imagenet() -> Self {
        Layout {
            stem_channels: 28,
            stem_stride: 2,
            stages: vec![(56, 3), (112, 6), (224, 12), (368, 1)],
            shared_t: 8,
            head_channels: 368,
        }
    }

    /// 32² inputs: stride-1 stem and the last downsampling stage dropped;
    /// the head pointwise block widens 224 → 368.
    pub fn desk() -> Self {
        Layout {
            stem_channels: 28,
            stem_stride: 1,
            stages: vec![(56, 3), (112, 6), (224, 12)],
            shared_t: 8,
            head_channels: 368,
        }
    }

    /// Small network for synthetic-data experiments at 32².
    pub fn micro() -> Self {
        Layout {
            stem_channels: 16,
            stem_stride: 1,
            stages: vec![(32, 1), (64, 1), (96, 1)],
            shared_t: 8,
            head_channels: 96,
        }
    }

    pub fn depths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.1).collect()
    }

    /// Widths scaled by `m`, rounded to multiples of 4 (minimum 8). Stage
    /// widths stay strictly increasing so every downsampling block expands.
    pub fn scaled(&self, multiplier: f64) -> Self {
        let round = |w: usize| -> usize {
            let v = (w as f64 * multiplier / 4.0).round() as usize * 4;
            v.max(8)
        };
        let stem_channels = round(self.stem_channels);
        let mut prev = stem_channels;
        let stages = self
            .stages
            .iter()
            .map(|&(w, r)| {
                prev = round(w).max(prev + 4);
                (prev, r)
            })
            .collect();
        Layout {
            stem_channels,
            stem_stride: self.stem_stride,
            stages,
            shared_t: self.shared_t,
            head_channels: round(self.head_channels),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecOptions {
    pub activation: Activation,
    pub use_se: bool,
    pub se_reduction: usize,
    pub num_classes: usize,
    pub input_resolution: usize,
    /// Adds batch norm + activation after the stem convolution.
    pub stem_bn: bool,
    /// When false, blocks process every channel (no half-identity or
    /// reused downsampled channels); used as a latency control.
    pub identity_reuse: bool,
    pub downsample_sigma: f64,
    pub bank_sigmas: [f64; 2],
    pub bn_eps: f64,
}

impl Default for SpecOptions {
    fn default() -> Self {
        SpecOptions {
            activation: Activation::Relu,
            use_se: false,
            se_reduction: DEFAULT_SE_REDUCTION,
            num_classes: 1000,
            input_resolution: 224,
            stem_bn: false,
            identity_reuse: true,
            downsample_sigma: DEFAULT_DOWNSAMPLE_SIGMA,
            bank_sigmas: DEFAULT_BANK_SIGMAS,
            bn_eps: crate::ops::norm::DEFAULT_EPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub blocks: Vec<BlockSpec>,
    pub variant: Variant,
    pub options: SpecOptions,
}

impl ModelSpec {
    pub fn from_layout(layout: &Layout, variant: Variant, options: SpecOptions) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut stem = BlockSpec::new(BlockKind::Stem, 3, layout.stem_channels, layout.stem_stride);
        stem.dw_policy = DwPolicy::Learnable;
        blocks.push(stem);
        let mut width = layout.stem_channels;
        for &(next, repeats) in &layout.stages {
            let mut ds = BlockSpec::new(BlockKind::Downsampling, width, next, 2);
            ds.dw_policy = variant.policy_for(BlockKind::Downsampling);
            blocks.push(ds);
            if repeats > 0 {
                let mut hi = BlockSpec::new(BlockKind::HalfIdentity, next, next, 1);
                hi.repeats = repeats;
                hi.dw_policy = variant.policy_for(BlockKind::HalfIdentity);
                blocks.push(hi);
            }
            width = next;
        }
        let mut shared = BlockSpec::new(BlockKind::SharedDw, width, width, 1);
        shared.t = layout.shared_t;
        shared.dw_policy = variant.policy_for(BlockKind::SharedDw);
        blocks.push(shared);
        blocks.push(BlockSpec::new(BlockKind::PointwiseBlock, width, layout.head_channels, 1));
        blocks.push(BlockSpec::new(BlockKind::AvgPool, layout.head_channels, layout.head_channels, 1));
        blocks.push(BlockSpec::new(
            BlockKind::Classifier,
            layout.head_channels,
            options.num_classes,
            1,
        ));
        let spec = ModelSpec {
            blocks,
            variant,
            options,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 1.0M-parameter network at 224² with 1000 classes.
    pub fn imagenet(variant: Variant) -> Self {
        Self::from_layout(&Layout::imagenet(), variant, SpecOptions::default()).expect("preset is valid")
    }

    pub fn desk(variant: Variant, num_classes: usize) -> Self {
        let options = SpecOptions {
            num_classes,
            input_resolution: 32,
            ..SpecOptions::default()
        };
        Self::from_layout(&Layout::desk(), variant, options).expect("preset is valid")
    }

    pub fn micro(variant: Variant, num_classes: usize) -> Self {
        let options = SpecOptions {
            num_classes,
            input_resolution: 32,
            ..SpecOptions::default()
        };
        Self::from_layout(&Layout::micro(), variant, options).expect("preset is valid")
    }

    /// Replaces every depthwise policy (and relabels nothing else).
    pub fn with_all_depthwise(mut self, policy: DwPolicy) -> Self {
        for b in &mut self.blocks {
            if b.kind.has_depthwise() {
                b.dw_policy = policy;
            }
        }
        self
    }

    /// Spatial size after each block, starting from the input.
    pub fn resolutions(&self) -> Vec<usize> {
        let mut res = self.options.input_resolution;
        let mut out = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            res = match b.kind {
                BlockKind::Stem | BlockKind::Downsampling => {
                    output_size(res, 3, b.stride, 1).unwrap_or(0)
                }
                BlockKind::AvgPool | BlockKind::Classifier => 1,
                _ => res,
            };
            out.push(res);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let opts = &self.options;
        if self.blocks.is_empty() {
            return Err(Error::spec("no blocks"));
        }
        if opts.num_classes == 0 || opts.input_resolution == 0 {
            return Err(Error::spec("num_classes and input_resolution must be positive"));
        }
        if opts.use_se && opts.se_reduction == 0 {
            return Err(Error::spec("se_reduction must be positive"));
        }
        if !(opts.downsample_sigma > 0.0) || opts.bank_sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::spec("Gaussian sigmas must be positive"));
        }
        if !(opts.bn_eps > 0.0) {
            return Err(Error::spec("bn_eps must be positive"));
        }
        let mut channels = 3;
        let mut res = opts.input_resolution;
        for (i, b) in self.blocks.iter().enumerate() {
            let at = |msg: String| Error::spec(format!("block {i} ({}): {msg}", b.kind.name()));
            if b.in_channels != channels {
                return Err(at(format!(
                    "expects {} input channels but previous block produces {channels}",
                    b.in_channels
                )));
            }
            if b.repeats == 0 {
                return Err(at("repeats must be at least 1".into()));
            }
            if !b.kind.has_depthwise() && b.dw_policy != DwPolicy::Learnable {
                return Err(at("only depthwise blocks take a kernel policy".into()));
            }
            match b.kind {
                BlockKind::Stem => {
                    if i != 0 || b.in_channels != 3 {
                        return Err(at("stem must come first and read 3 channels".into()));
                    }
                    if b.stride == 0 || b.out_channels == 0 {
                        return Err(at("stem needs positive stride and width".into()));
                    }
                    res = output_size(res, 3, b.stride, 1).unwrap_or(0);
                }
                BlockKind::Downsampling => {
                    if b.stride != 2 {
                        return Err(at("downsampling stride must be 2".into()));
                    }
                    if b.out_channels <= b.in_channels {
                        return Err(at(format!(
                            "must expand channels ({} -> {})",
                            b.in_channels, b.out_channels
                        )));
                    }
                    if res % 2 != 0 {
                        return Err(at(format!("input resolution {res} is not even")));
                    }
                    res /= 2;
                }
                BlockKind::HalfIdentity => {
                    if b.in_channels != b.out_channels || b.in_channels % 2 != 0 {
                        return Err(at(format!(
                            "needs equal, even widths (got {} -> {})",
                            b.in_channels, b.out_channels
                        )));
                    }
                    if b.stride != 1 {
                        return Err(at("stride must be 1".into()));
                    }
                }
                BlockKind::SharedDw => {
                    if b.t == 0 {
                        return Err(at("t must be at least 1".into()));
                    }
                    if b.in_channels != b.out_channels || b.stride != 1 {
                        return Err(at("keeps width and resolution".into()));
                    }
                }
                BlockKind::PointwiseBlock => {
                    if b.out_channels == 0 || b.stride != 1 {
                        return Err(at("needs positive width and stride 1".into()));
                    }
                }
                BlockKind::AvgPool => {
                    if b.in_channels != b.out_channels {
                        return Err(at("pooling keeps width".into()));
                    }
                    res = 1;
                }
                BlockKind::Classifier => {
                    if i + 1 != self.blocks.len() {
                        return Err(at("classifier must be last".into()));
                    }
                    if b.out_channels != opts.num_classes {
                        return Err(at(format!(
                            "produces {} logits for {} classes",
                            b.out_channels, opts.num_classes
                        )));
                    }
                    if res != 1 {
                        return Err(at("classifier needs a pooled input".into()));
                    }
                }
            }
            if b.kind != BlockKind::SharedDw && b.t != 1 {
                return Err(at("t only applies to shared_dw".into()));
            }
            if res == 0 {
                return Err(at("resolution collapsed to zero".into()));
            }
            channels = b.out_channels;
        }
        if self.blocks.last().map(|b| b.kind) != Some(BlockKind::Classifier) {
            return Err(Error::spec("model must end with a classifier"));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let o = &self.options;
        let mut kv = KeyValues::new();
        kv.push("variant", self.variant.name());
        kv.push("activation", o.activation.name());
        kv.push("use_se", o.use_se);
        kv.push("se_reduction", o.se_reduction);
        kv.push("num_classes", o.num_classes);
        kv.push("input_resolution", o.input_resolution);
        kv.push("stem_bn", o.stem_bn);
        kv.push("identity_reuse", o.identity_reuse);
        kv.push("downsample_sigma", o.downsample_sigma);
        kv.push("bank_sigmas", format!("{},{}", o.bank_sigmas[0], o.bank_sigmas[1]));
        kv.push("bn_eps", o.bn_eps);
        for b in &self.blocks {
            kv.push("block", b.to_text());
        }
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_key_values().to_text()
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let spec_err = |e: Error| Error::spec(e.to_string());
        let variant_s: String = kv.require("variant").map_err(spec_err)?;
        let act_s: String = kv.require("activation").map_err(spec_err)?;
        let sig_s: String = kv.require("bank_sigmas").map_err(spec_err)?;
        let sigmas: Vec<f64> = sig_s
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::spec(format!("bad bank_sigmas {sig_s:?}")))?;
        if sigmas.len() != 2 {
            return Err(Error::spec("bank_sigmas needs two values"));
        }
        let options = SpecOptions {
            activation: Activation::parse(&act_s)
                .ok_or_else(|| Error::spec(format!("unknown activation {act_s:?}")))?,
            use_se: kv.require("use_se").map_err(spec_err)?,
            se_reduction: kv.require("se_reduction").map_err(spec_err)?,
            num_classes: kv.require("num_classes").map_err(spec_err)?,
            input_resolution: kv.require("input_resolution").map_err(spec_err)?,
            stem_bn: kv.require("stem_bn").map_err(spec_err)?,
            identity_reuse: kv.require("identity_reuse").map_err(spec_err)?,
            downsample_sigma: kv.require("downsample_sigma").map_err(spec_err)?,
            bank_sigmas: [sigmas[0], sigmas[1]],
            bn_eps: kv.require("bn_eps").map_err(spec_err)?,
        };
        let blocks = kv
            .get_all("block")
            .map(BlockSpec::parse)
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            blocks,
            variant: Variant::parse(&variant_s)
                .ok_or_else(|| Error::spec(format!("unknown variant {variant_s:?}")))?,
            options,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text).map_err(|e| Error::spec(e.to_string()))?)
    }
}
