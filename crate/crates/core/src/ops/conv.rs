//! 2D convolution (standard, grouped, depthwise, pointwise) with explicit
//! backward.
//!
//! Three code paths share one contract:
//! - depthwise (`groups == C_in == C_out`): direct per-plane loops,
//! - pointwise (`1×1`, stride 1, no padding, `groups == 1`): one GEMM per sample,
//! - everything else: per-group im2col followed by GEMM.
//!
//! Reductions run kernel-major (outer loop over kernel taps) so results are
//! bit-reproducible. Work is split across samples only, so the thread count
//! never changes the arithmetic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Conv2dConfig {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dConfig {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dConfig {
            stride,
            padding,
            groups,
        }
    }

    /// `(K-1)/2` padding: keeps resolution at stride 1, floors at stride 2.
    pub const fn same(kernel: usize, stride: usize, groups: usize) -> Self {
        Conv2dConfig {
            stride,
            padding: (kernel - 1) / 2,
            groups,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Vec<T>>,
}

#[derive(Copy, Clone, Debug)]
struct Geometry {
    input: Shape,
    output: Shape,
    kernel: usize,
    cin_g: usize,
    cout_g: usize,
    cfg: Conv2dConfig,
}

impl Geometry {
    fn is_depthwise(&self) -> bool {
        self.cfg.groups == self.input.c && self.output.c == self.input.c
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.cfg.stride == 1 && self.cfg.padding == 0 && self.cfg.groups == 1
    }

    fn col_rows(&self) -> usize {
        self.cin_g * self.kernel * self.kernel
    }
}

pub fn output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (size + 2 * padding)
        .checked_sub(kernel)
        .map(|span| span / stride + 1)
}

fn geometry(input: Shape, weight: Shape, bias: Option<usize>, cfg: Conv2dConfig) -> Result<Geometry> {
    if cfg.groups == 0 || cfg.stride == 0 {
        return Err(Error::dim("groups and stride must be positive"));
    }
    if weight.h != weight.w || weight.h == 0 {
        return Err(Error::dim(format!("kernel must be square, got {weight}")));
    }
    let kernel = weight.h;
    if input.c % cfg.groups != 0 || weight.n % cfg.groups != 0 {
        return Err(Error::dim(format!(
            "channels (in {}, out {}) not divisible by groups {}",
            input.c, weight.n, cfg.groups
        )));
    }
    if weight.c * cfg.groups != input.c {
        return Err(Error::dim(format!(
            "weight {weight} expects {} input channels, input is {input}",
            weight.c * cfg.groups
        )));
    }
    if let Some(len) = bias {
        if len != weight.n {
            return Err(Error::dim(format!(
                "bias has {len} entries for {} output channels",
                weight.n
            )));
        }
    }
    let oh = output_size(input.h, kernel, cfg.stride, cfg.padding);
    let ow = output_size(input.w, kernel, cfg.stride, cfg.padding);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::dim(format!(
            "kernel {kernel} with padding {} larger than input {input}",
            cfg.padding
        )));
    };
    Ok(Geometry {
        input,
        output: Shape::new(input.n, weight.n, oh, ow),
        kernel,
        cin_g: weight.c,
        cout_g: weight.n / cfg.groups,
        cfg,
    })
}

/// Range of output columns whose input column `o*s + k - p` lands in `[0, w)`.
fn valid_range(out_len: usize, in_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > tap {
        ((in_len - 1 + pad - tap) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn depthwise_plane_forward<T: Element>(
    input: &[T],
    (h, w): (usize, usize),
    kernel: &[T],
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [T],
    (oh, ow): (usize, usize),
) {
    for ky in 0..k {
        let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, pad);
        for kx in 0..k {
            let wv = kernel[ky * k + kx];
            let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, pad);
            for oy in oy_lo..oy_hi {
                let iy = oy * stride + ky - pad;
                let row_in = &input[iy * w..(iy + 1) * w];
                let row_out = &mut out[oy * ow..(oy + 1) * ow];
                if stride == 1 {
                    let shift = kx as isize - pad as isize;
                    let src = &row_in[(ox_lo as isize + shift) as usize..(ox_hi as isize + shift) as usize];
                    for (o, &i) in row_out[ox_lo..ox_hi].iter_mut().zip(src) {
                        *o += wv * i;
                    }
                } else {
                    for ox in ox_lo..ox_hi {
                        row_out[ox] += wv * row_in[ox * stride + kx - pad];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_plane_backward_input<T: Element>(
    grad_out: &[T],
    (oh, ow): (usize, usize),
    kernel: &[T],
    k: usize,
    stride: usize,
    pad: usize,
    grad_in: &mut [T],
    (h, w): (usize, usize),
) {
    for ky in 0..k {
        let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, pad);
        for kx in 0..k {
            let wv = kernel[ky * k + kx];
            let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, pad);
            for oy in oy_lo..oy_hi {
                let iy = oy * stride + ky - pad;
                let row_g = &grad_out[oy * ow..(oy + 1) * ow];
                let row_in = &mut grad_in[iy * w..(iy + 1) * w];
                for ox in ox_lo..ox_hi {
                    row_in[ox * stride + kx - pad] += wv * row_g[ox];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_plane_backward_weight<T: Element>(
    grad_out: &[T],
    (oh, ow): (usize, usize),
    input: &[T],
    (h, w): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    grad_kernel: &mut [T],
) {
    for ky in 0..k {
        let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, pad);
        for kx in 0..k {
            let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, pad);
            let mut acc = T::zero();
            for oy in oy_lo..oy_hi {
                let iy = oy * stride + ky - pad;
                let row_g = &grad_out[oy * ow..(oy + 1) * ow];
                let row_in = &input[iy * w..(iy + 1) * w];
                for ox in ox_lo..ox_hi {
                    acc += row_g[ox] * row_in[ox * stride + kx - pad];
                }
            }
            grad_kernel[ky * k + kx] += acc;
        }
    }
}

/// Unfold the channels of one group into a `(cin_g·K·K) × (OH·OW)` matrix.
fn im2col<T: Element>(sample: &[T], g: &Geometry, group: usize, col: &mut [T]) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.output.h, g.output.w);
    let (k, s, p) = (g.kernel, g.cfg.stride, g.cfg.padding);
    let plane_out = oh * ow;
    col.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..g.cin_g {
        let c = group * g.cin_g + ci;
        let plane = &sample[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, h, ky, s, p);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(ow, w, kx, s, p);
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * plane_out..(row + 1) * plane_out];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    for ox in ox_lo..ox_hi {
                        dst[oy * ow + ox] = plane[iy * w + ox * s + kx - p];
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Element>(col: &[T], g: &Geometry, group: usize, sample_grad: &mut [T]) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.output.h, g.output.w);
    let (k, s, p) = (g.kernel, g.cfg.stride, g.cfg.padding);
    let plane_out = oh * ow;
    for ci in 0..g.cin_g {
        let c = group * g.cin_g + ci;
        let plane = &mut sample_grad[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, h, ky, s, p);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(ow, w, kx, s, p);
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * plane_out..(row + 1) * plane_out];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    for ox in ox_lo..ox_hi {
                        plane[iy * w + ox * s + kx - p] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

fn forward_sample<T: Element>(g: &Geometry, input: &[T], weight: &[T], out: &mut [T], col: &mut Vec<T>) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.output.h, g.output.w);
    let k2 = g.kernel * g.kernel;
    if g.is_depthwise() {
        for c in 0..g.input.c {
            depthwise_plane_forward(
                &input[c * h * w..(c + 1) * h * w],
                (h, w),
                &weight[c * k2..(c + 1) * k2],
                g.kernel,
                g.cfg.stride,
                g.cfg.padding,
                &mut out[c * oh * ow..(c + 1) * oh * ow],
                (oh, ow),
            );
        }
    } else if g.is_pointwise() {
        let hw = h * w;
        T::gemm(
            g.output.c,
            g.input.c,
            hw,
            T::one(),
            weight,
            (g.input.c, 1),
            input,
            (hw, 1),
            T::zero(),
            out,
            (hw, 1),
        );
    } else {
        let rows = g.col_rows();
        let plane_out = oh * ow;
        col.resize(rows * plane_out, T::zero());
        for group in 0..g.cfg.groups {
            im2col(input, g, group, col);
            let w_g = &weight[group * g.cout_g * rows..(group + 1) * g.cout_g * rows];
            let out_g = &mut out[group * g.cout_g * plane_out..(group + 1) * g.cout_g * plane_out];
            T::gemm(
                g.cout_g,
                rows,
                plane_out,
                T::one(),
                w_g,
                (rows, 1),
                col,
                (plane_out, 1),
                T::zero(),
                out_g,
                (plane_out, 1),
            );
        }
    }
}

pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    cfg: Conv2dConfig,
) -> Result<Tensor<T>> {
    let g = geometry(input.shape(), weight.shape(), bias.map(<[T]>::len), cfg)?;
    let mut out = Tensor::zeros(g.output);
    let in_len = g.input.sample();
    let out_len = g.output.sample();
    let plane_out = g.output.plane();
    let in_data = input.data();
    let w_data = weight.data();
    out.data_mut()
        .par_chunks_mut(out_len.max(1))
        .enumerate()
        .for_each_init(Vec::new, |col, (n, out_sample)| {
            forward_sample(&g, &in_data[n * in_len..(n + 1) * in_len], w_data, out_sample, col);
            if let Some(b) = bias {
                for (c, &bc) in b.iter().enumerate() {
                    out_sample[c * plane_out..(c + 1) * plane_out]
                        .iter_mut()
                        .for_each(|v| *v += bc);
                }
            }
        });
    out.ensure_finite("conv2d_forward")
}

fn backward_input_sample<T: Element>(g: &Geometry, grad_out: &[T], weight: &[T], grad_in: &mut [T], col: &mut Vec<T>) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.output.h, g.output.w);
    let k2 = g.kernel * g.kernel;
    if g.is_depthwise() {
        for c in 0..g.input.c {
            depthwise_plane_backward_input(
                &grad_out[c * oh * ow..(c + 1) * oh * ow],
                (oh, ow),
                &weight[c * k2..(c + 1) * k2],
                g.kernel,
                g.cfg.stride,
                g.cfg.padding,
                &mut grad_in[c * h * w..(c + 1) * h * w],
                (h, w),
            );
        }
    } else if g.is_pointwise() {
        let hw = h * w;
        // W^T · dY
        T::gemm(
            g.input.c,
            g.output.c,
            hw,
            T::one(),
            weight,
            (1, g.input.c),
            grad_out,
            (hw, 1),
            T::zero(),
            grad_in,
            (hw, 1),
        );
    } else {
        let rows = g.col_rows();
        let plane_out = oh * ow;
        col.resize(rows * plane_out, T::zero());
        for group in 0..g.cfg.groups {
            let w_g = &weight[group * g.cout_g * rows..(group + 1) * g.cout_g * rows];
            let go_g = &grad_out[group * g.cout_g * plane_out..(group + 1) * g.cout_g * plane_out];
            T::gemm(
                rows,
                g.cout_g,
                plane_out,
                T::one(),
                w_g,
                (1, rows),
                go_g,
                (plane_out, 1),
                T::zero(),
                col,
                (plane_out, 1),
            );
            col2im_add(col, g, group, grad_in);
        }
    }
}

fn backward_weight_sample<T: Element>(g: &Geometry, grad_out: &[T], input: &[T], grad_w: &mut [T], col: &mut Vec<T>) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.output.h, g.output.w);
    let k2 = g.kernel * g.kernel;
    if g.is_depthwise() {
        for c in 0..g.input.c {
            depthwise_plane_backward_weight(
                &grad_out[c * oh * ow..(c + 1) * oh * ow],
                (oh, ow),
                &input[c * h * w..(c + 1) * h * w],
                (h, w),
                g.kernel,
                g.cfg.stride,
                g.cfg.padding,
                &mut grad_w[c * k2..(c + 1) * k2],
            );
        }
    } else if g.is_pointwise() {
        let hw = h * w;
        // dY · X^T
        T::gemm(
            g.output.c,
            hw,
            g.input.c,
            T::one(),
            grad_out,
            (hw, 1),
            input,
            (1, hw),
            T::one(),
            grad_w,
            (g.input.c, 1),
        );
    } else {
        let rows = g.col_rows();
        let plane_out = oh * ow;
        col.resize(rows * plane_out, T::zero());
        for group in 0..g.cfg.groups {
            im2col(input, g, group, col);
            let go_g = &grad_out[group * g.cout_g * plane_out..(group + 1) * g.cout_g * plane_out];
            let gw_g = &mut grad_w[group * g.cout_g * rows..(group + 1) * g.cout_g * rows];
            T::gemm(
                g.cout_g,
                plane_out,
                rows,
                T::one(),
                go_g,
                (plane_out, 1),
                col,
                (1, plane_out),
                T::one(),
                gw_g,
                (rows, 1),
            );
        }
    }
}

/// Gradients of `Σ grad_out ⊙ conv(input)` with respect to input, weight and
/// bias. Pass `weight_grad = false` for fixed kernels.
pub fn conv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    cfg: Conv2dConfig,
    weight_grad: bool,
    bias_grad: bool,
) -> Result<Conv2dGrads<T>> {
    let g = geometry(input.shape(), weight.shape(), None, cfg)?;
    if grad_out.shape() != g.output {
        return Err(Error::dim(format!(
            "grad_out {} does not match conv output {}",
            grad_out.shape(),
            g.output
        )));
    }
    let in_len = g.input.sample();
    let out_len = g.output.sample();
    let go = grad_out.data();
    let w_data = weight.data();

    let mut grad_in = Tensor::zeros(g.input);
    grad_in
        .data_mut()
        .par_chunks_mut(in_len.max(1))
        .enumerate()
        .for_each_init(Vec::new, |col, (n, gi)| {
            backward_input_sample(&g, &go[n * out_len..(n + 1) * out_len], w_data, gi, col);
        });

    let grad_w = if weight_grad {
        let mut gw = Tensor::zeros(weight.shape());
        let mut col = Vec::new();
        for n in 0..g.input.n {
            backward_weight_sample(
                &g,
                &go[n * out_len..(n + 1) * out_len],
                input.sample(n),
                gw.data_mut(),
                &mut col,
            );
        }
        Some(gw.ensure_finite("conv2d_backward")?)
    } else {
        None
    };

    let grad_b = bias_grad.then(|| {
        let plane = g.output.plane();
        (0..g.output.c)
            .map(|c| {
                (0..g.output.n)
                    .map(|n| {
                        let s = (n * g.output.c + c) * plane;
                        go[s..s + plane].iter().copied().sum::<T>()
                    })
                    .sum()
            })
            .collect()
    });

    Ok(Conv2dGrads {
        input: grad_in.ensure_finite("conv2d_backward")?,
        weight: grad_w,
        bias: grad_b,
    })
}

/// Depthwise `K×K` convolution with `(K-1)/2` padding; `weight` is `C×1×K×K`.
pub fn depthwise<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let cfg = Conv2dConfig::same(weight.shape().h, stride, input.shape().c);
    conv2d_forward(input, weight, None, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_preserves_ones() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);
        let mut k = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3));
        k.data_mut()[4] = 1.0;
        let y = depthwise(&x, &k, 1).unwrap();
        assert_eq!(y.data(), &[1.0; 9]);
    }

    #[test]
    fn two_by_two_valid_conv() {
        let x = Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        let k = Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![1., 0., 0., 1.]).unwrap();
        let y = conv2d_forward(&x, &k, None, Conv2dConfig::new(1, 0, 1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn stride_two_halves_resolution_with_floor() {
        for (size, expect) in [(224, 112), (112, 56), (56, 28), (28, 14), (14, 7), (7, 4)] {
            assert_eq!(output_size(size, 3, 2, 1), Some(expect));
        }
    }

    #[test]
    fn mismatched_groups_is_dimension_error() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let k = Tensor::<f32>::zeros(Shape::new(4, 1, 3, 3));
        let err = conv2d_forward(&x, &k, None, Conv2dConfig::same(3, 1, 2)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), f32::MAX);
        let k = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 2.0);
        let err = depthwise(&x, &k, 1).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = rand::rng();
        let x = Tensor::<f64>::randn(Shape::new(2, 4, 5, 5), 1.0, &mut rng);
        let k = Tensor::<f64>::randn(Shape::new(6, 2, 3, 3), 1.0, &mut rng);
        let cfg = Conv2dConfig::same(3, 2, 2);
        let y = conv2d_forward(&x, &k, None, cfg).unwrap();
        let g = conv2d_backward(&Tensor::zeros(y.shape()), &x, &k, cfg, true, true).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.bias.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_single_pixel_grad_is_input_patch() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 5, 5), |_, c, y, x| (c * 25 + y * 5 + x) as f64);
        let k = Tensor::<f64>::zeros(Shape::new(2, 1, 3, 3));
        let y = depthwise(&x, &k, 1).unwrap();
        let mut go = Tensor::zeros(y.shape());
        // channel 1, output pixel (2, 3)
        go.data_mut()[25 + 2 * 5 + 3] = 1.0;
        let g = conv2d_backward(&go, &x, &k, Conv2dConfig::same(3, 1, 2), true, false).unwrap();
        let gw = g.weight.unwrap();
        assert!(gw.data()[..9].iter().all(|&v| v == 0.0));
        let expect: Vec<f64> = (1..=3)
            .flat_map(|iy| (2..=4).map(move |ix| (25 + iy * 5 + ix) as f64))
            .collect();
        assert_eq!(&gw.data()[9..], expect.as_slice());
    }

    #[test]
    fn fixed_kernel_skips_weight_grad() {
        let x = Tensor::<f32>::full(Shape::new(1, 2, 4, 4), 1.0);
        let k = Tensor::<f32>::full(Shape::new(2, 1, 3, 3), 1.0);
        let y = depthwise(&x, &k, 2).unwrap();
        let g = conv2d_backward(&y, &x, &k, Conv2dConfig::same(3, 2, 2), false, false).unwrap();
        assert!(g.weight.is_none() && g.bias.is_none());
    }
}
