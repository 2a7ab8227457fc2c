//! Turns a [`ModelSpec`] into parameter declarations and layer wiring.
//!
//! Declarations carry shapes, flags and an init rule but no storage, so
//! parameter counting (and width calibration) never allocates weights.

use crate::error::Result;
use crate::kernels::{self, FixedKernel, KernelBank};
use crate::tensor::{ParamFlags, Shape};

use super::spec::{BlockKind, DwPolicy, ModelSpec};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Init {
    /// `N(0, 2/fan_in)`.
    HeNormal { fan_in: usize },
    Normal { std: f64 },
    Uniform { bound: f64 },
    Zeros,
    Ones,
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug)]
pub(crate) struct Decl {
    pub name: String,
    pub dims: Vec<usize>,
    pub shape: Shape,
    pub flags: ParamFlags,
    pub init: Init,
}

#[derive(Copy, Clone, Debug)]
pub(crate) struct DwRef {
    pub weight: usize,
    pub stride: usize,
    pub kernel: usize,
    pub learnable: bool,
}

#[derive(Copy, Clone, Debug)]
pub(crate) struct PwRef {
    pub weight: usize,
}

/// Scale/shift index into params, running stats index into buffers.
#[derive(Copy, Clone, Debug)]
pub(crate) struct BnRef {
    pub scale: usize,
    pub shift: usize,
    pub mean: usize,
    pub var: usize,
}

#[derive(Copy, Clone, Debug)]
pub(crate) struct SeRef {
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Layer {
    Stem {
        weight: usize,
        bias: Option<usize>,
        bn: Option<BnRef>,
        stride: usize,
    },
    Downsampling {
        dw: DwRef,
        pw: PwRef,
        bn: BnRef,
        se: Option<SeRef>,
        reuse: bool,
    },
    HalfIdentity {
        dw: DwRef,
        pw: PwRef,
        bn: BnRef,
        se: Option<SeRef>,
        channels: usize,
        reuse: bool,
    },
    SharedDw {
        dw: DwRef,
        t: usize,
    },
    Pointwise {
        pw: PwRef,
        bn: BnRef,
    },
    AvgPool,
    Classifier {
        weight: usize,
        bias: usize,
    },
}

#[derive(Clone, Debug)]
pub struct NamedLayer {
    pub name: String,
    pub kind: BlockKind,
    pub(crate) layer: Layer,
}

#[derive(Default)]
pub(crate) struct Plan {
    pub params: Vec<Decl>,
    pub buffers: Vec<Decl>,
    pub layers: Vec<NamedLayer>,
}

/// Squeeze-and-excitation bottleneck width.
pub fn se_hidden(channels: usize, reduction: usize) -> usize {
    ((channels as f64 / reduction as f64).round() as usize).max(1)
}

impl Plan {
    fn param(&mut self, name: String, dims: Vec<usize>, flags: ParamFlags, init: Init) -> usize {
        let shape = shape_for(&dims);
        self.params.push(Decl {
            name,
            dims,
            shape,
            flags,
            init,
        });
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, channels: usize, init: Init) -> usize {
        self.buffers.push(Decl {
            name,
            dims: vec![channels],
            shape: Shape::matrix(channels, 1),
            flags: ParamFlags::BUFFER,
            init,
        });
        self.buffers.len() - 1
    }

    fn dw(&mut self, prefix: &str, channels: usize, stride: usize, policy: DwPolicy, spec: &ModelSpec) -> Result<DwRef> {
        let k = 3;
        let dims = vec![channels, 1, k, k];
        let fixed = |kernels: KernelBank| -> Vec<f64> {
            (0..channels)
                .flat_map(|c| kernels.for_channel(c).values.clone())
                .collect()
        };
        let (flags, init) = match policy {
            DwPolicy::Learnable => (ParamFlags::WEIGHT, Init::HeNormal { fan_in: k * k }),
            DwPolicy::Gaussian => {
                let g = kernels::gaussian_kernel(k, spec.options.downsample_sigma)?;
                (ParamFlags::FIXED_KERNEL, Init::Fixed(fixed(KernelBank::new(vec![g])?)))
            }
            DwPolicy::Bank(variant) => {
                let bank = kernels::edge_kernel_bank_with_sigmas(variant, spec.options.bank_sigmas)?;
                (ParamFlags::FIXED_KERNEL, Init::Fixed(fixed(bank)))
            }
            DwPolicy::Identity => {
                let id = FixedKernel::identity(k)?;
                (ParamFlags::FIXED_KERNEL, Init::Fixed(fixed(KernelBank::new(vec![id])?)))
            }
        };
        let weight = self.param(format!("{prefix}.dw.weight"), dims, flags, init);
        Ok(DwRef {
            weight,
            stride,
            kernel: k,
            learnable: flags.learnable,
        })
    }

    fn pw(&mut self, prefix: &str, cin: usize, cout: usize) -> PwRef {
        let weight = self.param(
            format!("{prefix}.pw.weight"),
            vec![cout, cin, 1, 1],
            ParamFlags::WEIGHT,
            Init::HeNormal { fan_in: cin },
        );
        PwRef { weight }
    }

    fn bn(&mut self, prefix: &str, channels: usize) -> BnRef {
        BnRef {
            scale: self.param(format!("{prefix}.bn.scale"), vec![channels], ParamFlags::EXEMPT, Init::Ones),
            shift: self.param(format!("{prefix}.bn.shift"), vec![channels], ParamFlags::EXEMPT, Init::Zeros),
            mean: self.buffer(format!("{prefix}.bn.running_mean"), channels, Init::Zeros),
            var: self.buffer(format!("{prefix}.bn.running_var"), channels, Init::Ones),
        }
    }

    fn se(&mut self, prefix: &str, channels: usize, reduction: usize) -> SeRef {
        let hidden = se_hidden(channels, reduction);
        let b1 = 1.0 / (channels as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        SeRef {
            fc1_w: self.param(
                format!("{prefix}.se.fc1.weight"),
                vec![hidden, channels],
                ParamFlags::WEIGHT,
                Init::Uniform { bound: b1 },
            ),
            fc1_b: self.param(format!("{prefix}.se.fc1.bias"), vec![hidden], ParamFlags::EXEMPT, Init::Zeros),
            fc2_w: self.param(
                format!("{prefix}.se.fc2.weight"),
                vec![channels, hidden],
                ParamFlags::WEIGHT,
                Init::Uniform { bound: b2 },
            ),
            fc2_b: self.param(format!("{prefix}.se.fc2.bias"), vec![channels], ParamFlags::EXEMPT, Init::Zeros),
        }
    }

    fn layer(&mut self, name: String, kind: BlockKind, layer: Layer) {
        self.layers.push(NamedLayer { name, kind, layer });
    }
}

fn shape_for(dims: &[usize]) -> Shape {
    match *dims {
        [n] => Shape::matrix(n, 1),
        [n, c] => Shape::matrix(n, c),
        [n, c, h, w] => Shape::new(n, c, h, w),
        _ => unreachable!("parameters are rank 1, 2 or 4"),
    }
}

pub(crate) fn plan(spec: &ModelSpec) -> Result<Plan> {
    spec.validate()?;
    let opts = &spec.options;
    let se_r = opts.use_se.then_some(opts.se_reduction);
    let mut p = Plan::default();
    let mut ds_index = 0;
    let mut hi_index = 0;
    for b in &spec.blocks {
        match b.kind {
            BlockKind::Stem => {
                let weight = p.param(
                    "stem.weight".into(),
                    vec![b.out_channels, 3, 3, 3],
                    ParamFlags::WEIGHT,
                    Init::HeNormal { fan_in: 27 },
                );
                let (bias, bn) = if opts.stem_bn {
                    (None, Some(p.bn("stem", b.out_channels)))
                } else {
                    let bias = p.param("stem.bias".into(), vec![b.out_channels], ParamFlags::EXEMPT, Init::Zeros);
                    (Some(bias), None)
                };
                p.layer(
                    "stem".into(),
                    b.kind,
                    Layer::Stem {
                        weight,
                        bias,
                        bn,
                        stride: b.stride,
                    },
                );
            }
            BlockKind::Downsampling => {
                ds_index += 1;
                let name = format!("ds{ds_index}");
                let dw = p.dw(&name, b.in_channels, 2, b.dw_policy, spec)?;
                let generated = if opts.identity_reuse {
                    b.out_channels - b.in_channels
                } else {
                    b.out_channels
                };
                let pw = p.pw(&name, b.in_channels, generated);
                let bn = p.bn(&name, generated);
                let se = se_r.map(|r| p.se(&name, generated, r));
                p.layer(
                    name,
                    b.kind,
                    Layer::Downsampling {
                        dw,
                        pw,
                        bn,
                        se,
                        reuse: opts.identity_reuse,
                    },
                );
            }
            BlockKind::HalfIdentity => {
                hi_index += 1;
                let c = b.in_channels;
                for r in 0..b.repeats {
                    let name = format!("hi{hi_index}.{r}");
                    let (dw_c, pw_out) = if opts.identity_reuse { (c / 2, c / 2) } else { (c, c) };
                    let dw = p.dw(&name, dw_c, 1, b.dw_policy, spec)?;
                    let pw = p.pw(&name, c, pw_out);
                    let bn = p.bn(&name, pw_out);
                    let se = se_r.map(|r| p.se(&name, pw_out, r));
                    p.layer(
                        name,
                        b.kind,
                        Layer::HalfIdentity {
                            dw,
                            pw,
                            bn,
                            se,
                            channels: c,
                            reuse: opts.identity_reuse,
                        },
                    );
                }
            }
            BlockKind::SharedDw => {
                let dw = p.dw("shared", b.in_channels, 1, b.dw_policy, spec)?;
                p.layer("shared".into(), b.kind, Layer::SharedDw { dw, t: b.t });
            }
            BlockKind::PointwiseBlock => {
                let pw = p.pw("head", b.in_channels, b.out_channels);
                let bn = p.bn("head", b.out_channels);
                p.layer("head".into(), b.kind, Layer::Pointwise { pw, bn });
            }
            BlockKind::AvgPool => p.layer("pool".into(), b.kind, Layer::AvgPool),
            BlockKind::Classifier => {
                let weight = p.param(
                    "classifier.weight".into(),
                    vec![b.out_channels, b.in_channels],
                    ParamFlags::WEIGHT,
                    Init::Normal { std: 0.01 },
                );
                let bias = p.param(
                    "classifier.bias".into(),
                    vec![b.out_channels],
                    ParamFlags::EXEMPT,
                    Init::Zeros,
                );
                p.layer("classifier".into(), b.kind, Layer::Classifier { weight, bias });
            }
        }
    }
    Ok(p)
}
