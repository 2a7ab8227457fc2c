//! Built VGNet model with explicit per-block forward and backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_backward, conv2d_forward, Conv2dConfig};
use crate::ops::norm::{self, BatchNormCache, BatchStats, Mode, RunningStats};
use crate::ops::{
    activation, activation_backward, global_avg_pool, global_avg_pool_backward, linear, linear_backward,
    scale_channels, scale_channels_backward, sigmoid, Activation,
};
use crate::tensor::{Element, Parameter, Shape, Tensor};

use super::build::{self, BnRef, Decl, DwRef, Init, Layer, NamedLayer, PwRef, SeRef};
use super::params::ParamReport;
use super::spec::{BlockKind, ModelSpec};

pub const BN_MOMENTUM: f64 = norm::DEFAULT_MOMENTUM;

#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    spec: ModelSpec,
    params: Vec<Parameter<T>>,
    buffers: Vec<Parameter<T>>,
    layers: Vec<NamedLayer>,
}

/// Activations saved by [`Model::forward_train`] for [`Model::backward`].
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
}

struct StatUpdate<T> {
    bn: BnRef,
    stats: BatchStats<T>,
}

struct UnitCache<T> {
    bn: BatchNormCache<T>,
    act_in: Tensor<T>,
    se: Option<SeCache<T>>,
}

struct SeCache<T> {
    input: Tensor<T>,
    pooled: Tensor<T>,
    hidden: Tensor<T>,
    hidden_act: Tensor<T>,
    gate: Tensor<T>,
}

enum Cache<T> {
    Stem {
        input: Tensor<T>,
        bn: Option<(BatchNormCache<T>, Tensor<T>)>,
    },
    Downsampling {
        input: Tensor<T>,
        blurred: Tensor<T>,
        unit: UnitCache<T>,
    },
    HalfIdentity {
        /// Depthwise input (left half, or all channels without reuse).
        dw_input: Tensor<T>,
        /// Pointwise input.
        mixed: Tensor<T>,
        unit: UnitCache<T>,
    },
    SharedDw {
        inputs: Vec<Tensor<T>>,
    },
    Pointwise {
        input: Tensor<T>,
        unit: UnitCache<T>,
    },
    AvgPool {
        shape: Shape,
    },
    Classifier {
        input: Tensor<T>,
    },
}

struct Ctx<'a, T> {
    params: &'a [Parameter<T>],
    buffers: &'a [Parameter<T>],
    act: Activation,
    eps: f64,
    mode: Mode,
    updates: Vec<StatUpdate<T>>,
}

impl<'a, T: Element> Ctx<'a, T> {
    fn w(&self, i: usize) -> &'a Tensor<T> {
        &self.params[i].tensor
    }

    fn v(&self, i: usize) -> &'a [T] {
        self.params[i].tensor.data()
    }

    fn train(&self) -> bool {
        self.mode == Mode::Train
    }

    fn dw(&self, dw: DwRef, x: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = Conv2dConfig::same(dw.kernel, dw.stride, x.shape().c);
        conv2d_forward(x, self.w(dw.weight), None, cfg)
    }

    fn bn(&mut self, bn: BnRef, x: &Tensor<T>) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
        let (scale, shift) = (self.v(bn.scale), self.v(bn.shift));
        match self.mode {
            Mode::Train => {
                let (y, cache, stats) = norm::batchnorm_train(x, scale, shift, self.eps)?;
                self.updates.push(StatUpdate { bn, stats });
                Ok((y, Some(cache)))
            }
            Mode::Eval => {
                let mean = self.buffers[bn.mean].tensor.data();
                let var = self.buffers[bn.var].tensor.data();
                Ok((norm::batchnorm_eval(x, scale, shift, mean, var, self.eps)?, None))
            }
        }
    }

    fn se(&self, se: SeRef, x: Tensor<T>) -> Result<(Tensor<T>, Option<SeCache<T>>)> {
        let pooled = global_avg_pool(&x)?;
        let hidden = linear(&pooled, self.w(se.fc1_w), Some(self.v(se.fc1_b)))?;
        let hidden_act = activation(&hidden, self.act);
        let logits = linear(&hidden_act, self.w(se.fc2_w), Some(self.v(se.fc2_b)))?;
        let gate = logits.map(sigmoid);
        let y = scale_channels(&x, &gate)?;
        let cache = self.train().then(|| SeCache {
            input: x,
            pooled,
            hidden,
            hidden_act,
            gate,
        });
        Ok((y, cache))
    }

    /// Pointwise conv → batch norm → activation (→ SE).
    fn unit(&mut self, pw: PwRef, bn: BnRef, se: Option<SeRef>, x: &Tensor<T>) -> Result<(Tensor<T>, Option<UnitCache<T>>)> {
        let p = conv2d_forward(x, self.w(pw.weight), None, Conv2dConfig::new(1, 0, 1))?;
        let (b, bn_cache) = self.bn(bn, &p)?;
        drop(p);
        let z = activation(&b, self.act);
        let (y, se_cache) = match se {
            Some(se) => self.se(se, z)?,
            None => (z, None),
        };
        let cache = bn_cache.map(|bn| UnitCache {
            bn,
            act_in: b,
            se: se_cache,
        });
        Ok((y, cache))
    }

    fn layer(&mut self, layer: &Layer, x: Tensor<T>) -> Result<(Tensor<T>, Option<Cache<T>>)> {
        let train = self.train();
        match *layer {
            Layer::Stem { weight, bias, bn, stride } => {
                let cfg = Conv2dConfig::same(3, stride, 1);
                let y = conv2d_forward(&x, self.w(weight), bias.map(|b| self.v(b)), cfg)?;
                match bn {
                    Some(bn) => {
                        let (b, bn_cache) = self.bn(bn, &y)?;
                        let z = activation(&b, self.act);
                        let cache = bn_cache.map(|c| Cache::Stem {
                            input: x,
                            bn: Some((c, b)),
                        });
                        Ok((z, cache))
                    }
                    None => Ok((y, train.then_some(Cache::Stem { input: x, bn: None }))),
                }
            }
            Layer::Downsampling { dw, pw, bn, se, reuse } => {
                let blurred = self.dw(dw, &x)?;
                let (z, unit) = self.unit(pw, bn, se, &blurred)?;
                let out = if reuse {
                    Tensor::concat_channels(&blurred, &z)?
                } else {
                    z
                };
                let cache = unit.map(|unit| Cache::Downsampling {
                    input: x,
                    blurred,
                    unit,
                });
                Ok((out, cache))
            }
            Layer::HalfIdentity {
                dw,
                pw,
                bn,
                se,
                channels,
                reuse,
            } => {
                if reuse {
                    let half = channels / 2;
                    let left = x.narrow_channels(0, half)?;
                    let right = x.narrow_channels(half, half)?;
                    let mixed = Tensor::concat_channels(&self.dw(dw, &left)?, &right)?;
                    let (z, unit) = self.unit(pw, bn, se, &mixed)?;
                    let out = Tensor::concat_channels(&right, &z)?;
                    let cache = unit.map(|unit| Cache::HalfIdentity {
                        dw_input: left,
                        mixed,
                        unit,
                    });
                    Ok((out, cache))
                } else {
                    let mixed = self.dw(dw, &x)?;
                    let (z, unit) = self.unit(pw, bn, se, &mixed)?;
                    let cache = unit.map(|unit| Cache::HalfIdentity {
                        dw_input: x,
                        mixed,
                        unit,
                    });
                    Ok((z, cache))
                }
            }
            Layer::SharedDw { dw, t } => {
                let mut inputs = Vec::new();
                let mut cur = x;
                for _ in 0..t {
                    let next = self.dw(dw, &cur)?;
                    if train {
                        inputs.push(cur);
                    }
                    cur = next;
                }
                Ok((cur, train.then_some(Cache::SharedDw { inputs })))
            }
            Layer::Pointwise { pw, bn } => {
                let (y, unit) = self.unit(pw, bn, None, &x)?;
                Ok((y, unit.map(|unit| Cache::Pointwise { input: x, unit })))
            }
            Layer::AvgPool => {
                let shape = x.shape();
                Ok((global_avg_pool(&x)?, train.then_some(Cache::AvgPool { shape })))
            }
            Layer::Classifier { weight, bias } => {
                let y = linear(&x, self.w(weight), Some(self.v(bias)))?;
                Ok((y, train.then_some(Cache::Classifier { input: x })))
            }
        }
    }
}

/// Backward helpers; gradients accumulate into the parameters' buffers.
struct Grad<'a, T> {
    params: &'a mut [Parameter<T>],
    act: Activation,
}

impl<T: Element> Grad<'_, T> {
    fn add(&mut self, i: usize, g: &[T]) {
        let p = &mut self.params[i];
        if p.learnable {
            p.tensor.grad_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }

    fn dw(&mut self, dw: DwRef, input: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        let w = &self.params[dw.weight].tensor;
        let cfg = Conv2dConfig::same(dw.kernel, dw.stride, input.shape().c);
        let grads = conv2d_backward(g, input, w, cfg, dw.learnable, false)?;
        if let Some(gw) = grads.weight {
            self.add(dw.weight, gw.data());
        }
        Ok(grads.input)
    }

    fn bn(&mut self, bn: BnRef, cache: &BatchNormCache<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        let scale = self.params[bn.scale].tensor.data();
        let (gi, gs, gb) = norm::batchnorm_backward(g, cache, scale)?;
        self.add(bn.scale, &gs);
        self.add(bn.shift, &gb);
        Ok(gi)
    }

    fn se(&mut self, se: SeRef, cache: &SeCache<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut g_in, g_gate) = scale_channels_backward(g, &cache.input, &cache.gate)?;
        let mut g_logits = g_gate;
        for (gl, &s) in g_logits.data_mut().iter_mut().zip(cache.gate.data()) {
            *gl *= s * (T::one() - s);
        }
        let l2 = linear_backward(&g_logits, &cache.hidden_act, &self.params[se.fc2_w].tensor)?;
        self.add(se.fc2_w, l2.weight.data());
        self.add(se.fc2_b, &l2.bias);
        let g_hidden = activation_backward(&l2.input, &cache.hidden, self.act);
        let l1 = linear_backward(&g_hidden, &cache.pooled, &self.params[se.fc1_w].tensor)?;
        self.add(se.fc1_w, l1.weight.data());
        self.add(se.fc1_b, &l1.bias);
        g_in.add_assign(&global_avg_pool_backward(&l1.input, cache.input.shape())?)?;
        Ok(g_in)
    }

    fn unit(&mut self, pw: PwRef, bn: BnRef, se: Option<SeRef>, input: &Tensor<T>, cache: &UnitCache<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = match (se, &cache.se) {
            (Some(se), Some(sc)) => self.se(se, sc, g)?,
            _ => g.clone(),
        };
        let g = activation_backward(&g, &cache.act_in, self.act);
        let g = self.bn(bn, &cache.bn, &g)?;
        let w = &self.params[pw.weight].tensor;
        let grads = conv2d_backward(&g, input, w, Conv2dConfig::new(1, 0, 1), true, false)?;
        self.add(pw.weight, grads.weight.expect("requested").data());
        Ok(grads.input)
    }

    fn layer(&mut self, layer: &Layer, cache: &Cache<T>, g: Tensor<T>) -> Result<Tensor<T>> {
        match (layer, cache) {
            (Layer::Stem { weight, bias, stride, .. }, Cache::Stem { input, bn }) => {
                let g = match (layer, bn) {
                    (Layer::Stem { bn: Some(bn_ref), .. }, Some((bn_cache, act_in))) => {
                        let g = activation_backward(&g, act_in, self.act);
                        self.bn(*bn_ref, bn_cache, &g)?
                    }
                    _ => g,
                };
                let w = &self.params[*weight].tensor;
                let cfg = Conv2dConfig::same(3, *stride, 1);
                let grads = conv2d_backward(&g, input, w, cfg, true, bias.is_some())?;
                self.add(*weight, grads.weight.expect("requested").data());
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    self.add(*b, &gb);
                }
                Ok(grads.input)
            }
            (Layer::Downsampling { dw, pw, bn, se, reuse }, Cache::Downsampling { input, blurred, unit }) => {
                let g_blurred = if *reuse {
                    let cin = blurred.shape().c;
                    let generated = g.shape().c - cin;
                    let mut g_direct = g.narrow_channels(0, cin)?;
                    let g_z = g.narrow_channels(cin, generated)?;
                    g_direct.add_assign(&self.unit(*pw, *bn, *se, blurred, unit, &g_z)?)?;
                    g_direct
                } else {
                    self.unit(*pw, *bn, *se, blurred, unit, &g)?
                };
                self.dw(*dw, input, &g_blurred)
            }
            (
                Layer::HalfIdentity {
                    dw,
                    pw,
                    bn,
                    se,
                    channels,
                    reuse,
                },
                Cache::HalfIdentity { dw_input, mixed, unit },
            ) => {
                if *reuse {
                    let half = channels / 2;
                    let mut g_right = g.narrow_channels(0, half)?;
                    let g_z = g.narrow_channels(half, half)?;
                    let g_mixed = self.unit(*pw, *bn, *se, mixed, unit, &g_z)?;
                    g_right.add_assign(&g_mixed.narrow_channels(half, half)?)?;
                    let g_left = self.dw(*dw, dw_input, &g_mixed.narrow_channels(0, half)?)?;
                    Tensor::concat_channels(&g_left, &g_right)
                } else {
                    let g_mixed = self.unit(*pw, *bn, *se, mixed, unit, &g)?;
                    self.dw(*dw, dw_input, &g_mixed)
                }
            }
            (Layer::SharedDw { dw, .. }, Cache::SharedDw { inputs }) => {
                let mut g = g;
                for input in inputs.iter().rev() {
                    g = self.dw(*dw, input, &g)?;
                }
                Ok(g)
            }
            (Layer::Pointwise { pw, bn }, Cache::Pointwise { input, unit }) => self.unit(*pw, *bn, None, input, unit, &g),
            (Layer::AvgPool, Cache::AvgPool { shape }) => global_avg_pool_backward(&g, *shape),
            (Layer::Classifier { weight, bias }, Cache::Classifier { input }) => {
                let grads = linear_backward(&g, input, &self.params[*weight].tensor)?;
                self.add(*weight, grads.weight.data());
                self.add(*bias, &grads.bias);
                Ok(grads.input)
            }
            _ => unreachable!("tape recorded by this model"),
        }
    }
}

fn materialize<T: Element>(decl: &Decl, rng: &mut ChaCha8Rng) -> Result<Parameter<T>> {
    let tensor = match &decl.init {
        Init::HeNormal { fan_in } => Tensor::randn(decl.shape, (2.0 / *fan_in as f64).sqrt(), rng),
        Init::Normal { std } => Tensor::randn(decl.shape, *std, rng),
        Init::Uniform { bound } => Tensor::uniform(decl.shape, *bound, rng),
        Init::Zeros => Tensor::zeros(decl.shape),
        Init::Ones => Tensor::full(decl.shape, T::one()),
        Init::Fixed(values) => Tensor::new(decl.shape, values.iter().map(|&v| T::of(v)).collect())?,
    };
    Parameter::new(decl.name.clone(), decl.dims.clone(), tensor, decl.flags)
}

impl<T: Element> Model<T> {
    /// Builds and initializes a model; identical `(spec, seed)` give
    /// identical weights.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let plan = build::plan(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = plan
            .params
            .iter()
            .map(|d| materialize(d, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let buffers = plan
            .buffers
            .iter()
            .map(|d| materialize(d, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            spec: spec.clone(),
            params,
            buffers,
            layers: plan.layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> &[Parameter<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.buffers
    }

    pub fn layers(&self) -> &[NamedLayer] {
        &self.layers
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn count_params(&self) -> ParamReport {
        ParamReport::from_params(&self.params)
    }

    fn ctx(&self, mode: Mode) -> Ctx<'_, T> {
        Ctx {
            params: &self.params,
            buffers: &self.buffers,
            act: self.spec.options.activation,
            eps: self.spec.options.bn_eps,
            mode,
            updates: Vec::new(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let res = self.spec.options.input_resolution;
        if s.c != 3 || s.h != res || s.w != res {
            return Err(Error::dim(format!("model expects Nx3x{res}x{res} input, got {s}")));
        }
        Ok(())
    }

    /// Inference pass using running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut ctx = self.ctx(Mode::Eval);
        let mut cur = x.clone();
        for l in &self.layers {
            cur = ctx.layer(&l.layer, cur)?.0;
        }
        Ok(cur)
    }

    /// Eval-mode output of every block, in network order.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Vec<(String, Tensor<T>)>> {
        self.check_input(x)?;
        let mut ctx = self.ctx(Mode::Eval);
        let mut cur = x.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            cur = ctx.layer(&l.layer, cur)?.0;
            out.push((l.name.clone(), cur.clone()));
        }
        Ok(out)
    }

    /// Training pass: batch statistics, running stats updated, activations
    /// recorded for [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut ctx = self.ctx(Mode::Train);
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, cache) = ctx.layer(&l.layer, cur)?;
            caches.push(cache.expect("train mode records every layer"));
            cur = y;
        }
        let updates = std::mem::take(&mut ctx.updates);
        drop(ctx);
        for u in updates {
            let mut running = RunningStats {
                mean: self.buffers[u.bn.mean].tensor.data().to_vec(),
                var: self.buffers[u.bn.var].tensor.data().to_vec(),
            };
            norm::update_running(&mut running, &u.stats, BN_MOMENTUM);
            self.buffers[u.bn.mean].tensor.data_mut().copy_from_slice(&running.mean);
            self.buffers[u.bn.var].tensor.data_mut().copy_from_slice(&running.var);
        }
        Ok((cur, Tape { caches }))
    }

    /// Accumulates parameter gradients for `grad_logits` and returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, tape: Tape<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut grad = Grad {
            params: &mut self.params,
            act: self.spec.options.activation,
        };
        let mut g = grad_logits.clone();
        for (l, cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = grad.layer(&l.layer, cache, g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Same model in another precision.
    pub fn cast<U: Element>(&self) -> Model<U> {
        let conv = |p: &Parameter<T>| {
            Parameter::new(p.name.clone(), p.dims.clone(), p.tensor.cast(), p.flags())
                .expect("flags already validated")
        };
        Model {
            spec: self.spec.clone(),
            params: self.params.iter().map(conv).collect(),
            buffers: self.buffers.iter().map(conv).collect(),
            layers: self.layers.clone(),
        }
    }

    /// Names of layers of a given kind, in network order.
    pub fn layer_names(&self, kind: BlockKind) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.kind == kind)
            .map(|l| l.name.as_str())
            .collect()
    }
}
