//! Fixed (unlearnable) depthwise kernels: Gaussian blurs and edge detectors.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum KernelLabel {
    Gaussian,
    SobelX,
    SobelY,
    SobelDiag1,
    SobelDiag2,
    Laplacian4,
    Laplacian8,
    Identity,
}

impl KernelLabel {
    pub fn is_edge(self) -> bool {
        !matches!(self, KernelLabel::Gaussian | KernelLabel::Identity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedKernel {
    pub label: KernelLabel,
    pub size: usize,
    /// Row-major `size×size`.
    pub values: Vec<f64>,
    pub sigma: Option<f64>,
}

impl FixedKernel {
    fn stencil(label: KernelLabel, rows: [[f64; 3]; 3]) -> Self {
        FixedKernel {
            label,
            size: 3,
            values: rows.iter().flatten().copied().collect(),
            sigma: None,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn identity(size: usize) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::arg(format!("kernel size must be odd, got {size}")));
        }
        let mut values = vec![0.0; size * size];
        values[size * size / 2] = 1.0;
        Ok(FixedKernel {
            label: KernelLabel::Identity,
            size,
            values,
            sigma: None,
        })
    }

    pub fn sobel_x() -> Self {
        Self::stencil(KernelLabel::SobelX, [[-1., 0., 1.], [-2., 0., 2.], [-1., 0., 1.]])
    }

    pub fn sobel_y() -> Self {
        Self::stencil(KernelLabel::SobelY, [[-1., -2., -1.], [0., 0., 0.], [1., 2., 1.]])
    }

    /// Sobel rotated by 45°.
    pub fn sobel_diag1() -> Self {
        Self::stencil(KernelLabel::SobelDiag1, [[0., 1., 2.], [-1., 0., 1.], [-2., -1., 0.]])
    }

    /// Horizontal mirror of [`FixedKernel::sobel_diag1`] (135°).
    pub fn sobel_diag2() -> Self {
        Self::stencil(KernelLabel::SobelDiag2, [[2., 1., 0.], [1., 0., -1.], [0., -1., -2.]])
    }

    pub fn laplacian4() -> Self {
        Self::stencil(KernelLabel::Laplacian4, [[0., 1., 0.], [1., -4., 1.], [0., 1., 0.]])
    }

    pub fn laplacian8() -> Self {
        Self::stencil(KernelLabel::Laplacian8, [[1., 1., 1.], [1., -8., 1.], [1., 1., 1.]])
    }
}

/// Normalized isotropic Gaussian `exp(−r²/2σ²)` sampled on a `size×size` grid.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<FixedKernel> {
    if size % 2 == 0 {
        return Err(Error::arg(format!("kernel size must be odd, got {size}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    let c = (size / 2) as f64;
    let mut values: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    Ok(FixedKernel {
        label: KernelLabel::Gaussian,
        size,
        values,
        sigma: Some(sigma),
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum BankVariant {
    /// Sobel x/y and both Laplacians.
    Ek4,
    /// `Ek4` plus the diagonal Sobels and two Gaussians.
    Ek6Gk2,
}

impl BankVariant {
    pub fn name(self) -> &'static str {
        match self {
            BankVariant::Ek4 => "ek4",
            BankVariant::Ek6Gk2 => "ek6_gk2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ek4" => Some(BankVariant::Ek4),
            "ek6_gk2" => Some(BankVariant::Ek6Gk2),
            _ => None,
        }
    }
}

pub const DEFAULT_BANK_SIGMAS: [f64; 2] = [0.85, 1.3];

#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    kernels: Vec<FixedKernel>,
}

impl KernelBank {
    pub fn new(kernels: Vec<FixedKernel>) -> Result<Self> {
        let Some(first) = kernels.first() else {
            return Err(Error::arg("kernel bank must not be empty"));
        };
        if kernels.iter().any(|k| k.size != first.size) {
            return Err(Error::arg("all kernels in a bank must share one size"));
        }
        Ok(KernelBank { kernels })
    }

    pub fn kernels(&self) -> &[FixedKernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels[0].size
    }

    /// Kernel used by channel `c` under the tiling rule.
    pub fn for_channel(&self, c: usize) -> &FixedKernel {
        &self.kernels[c % self.kernels.len()]
    }
}

pub fn edge_kernel_bank(variant: BankVariant) -> KernelBank {
    edge_kernel_bank_with_sigmas(variant, DEFAULT_BANK_SIGMAS).expect("default sigmas are positive")
}

pub fn edge_kernel_bank_with_sigmas(variant: BankVariant, sigmas: [f64; 2]) -> Result<KernelBank> {
    let mut kernels = vec![
        FixedKernel::sobel_x(),
        FixedKernel::sobel_y(),
        FixedKernel::laplacian4(),
        FixedKernel::laplacian8(),
    ];
    if variant == BankVariant::Ek6Gk2 {
        kernels.push(FixedKernel::sobel_diag1());
        kernels.push(FixedKernel::sobel_diag2());
        kernels.push(gaussian_kernel(3, sigmas[0])?);
        kernels.push(gaussian_kernel(3, sigmas[1])?);
    }
    KernelBank::new(kernels)
}

/// `C×1×K×K` depthwise weight where channel `i` gets `bank[i mod |bank|]`.
pub fn assign_to_channels<T: Element>(bank: &KernelBank, channels: usize) -> Result<Tensor<T>> {
    if channels == 0 {
        return Err(Error::arg("channel count must be at least 1"));
    }
    let k = bank.kernel_size();
    let data = (0..channels)
        .flat_map(|c| bank.for_channel(c).values.iter().map(|&v| T::of(v)))
        .collect();
    Tensor::new(Shape::new(channels, 1, k, k), data)
}

/// Every channel gets the same kernel.
pub fn replicate<T: Element>(kernel: &FixedKernel, channels: usize) -> Result<Tensor<T>> {
    let bank = KernelBank::new(vec![kernel.clone()])?;
    assign_to_channels(&bank, channels)
}
