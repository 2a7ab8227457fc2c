//! Classifies depthwise kernels as identity, low-pass, edge, zero or other.

use std::fmt::Write as _;

use crate::checkpoint::Checkpoint;
use crate::kernels::FixedKernel;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelClass {
    Identity,
    Lowpass,
    Edge,
    Zero,
    Other,
}

impl KernelClass {
    pub const ALL: [KernelClass; 5] = [
        KernelClass::Identity,
        KernelClass::Lowpass,
        KernelClass::Edge,
        KernelClass::Zero,
        KernelClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelClass::Identity => "identity",
            KernelClass::Lowpass => "lowpass",
            KernelClass::Edge => "edge",
            KernelClass::Zero => "zero",
            KernelClass::Other => "other",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Thresholds {
    pub identity: f64,
    pub lowpass: f64,
    pub edge: f64,
    /// A kernel is zero when its largest magnitude is below this fraction
    /// of the layer's largest magnitude.
    pub zero_relative: f64,
    /// Edge kernels must have `|DC| < edge_dc·Σ|k|`.
    pub edge_dc: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            identity: 0.8,
            lowpass: 0.8,
            edge: 0.8,
            zero_relative: 1e-3,
            edge_dc: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelScore {
    pub layer: String,
    pub channel: usize,
    pub identity: f64,
    pub lowpass: f64,
    pub edge: f64,
    pub zero: f64,
    pub class: KernelClass,
    pub values: Vec<f64>,
}

/// `dot(a, b)/√(a·a · b·b)` after removing means; 0 when either side is flat.
pub fn centered_cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa * bb).sqrt()
    }
}

fn edge_templates(k: usize) -> Vec<Vec<f64>> {
    if k != 3 {
        return Vec::new();
    }
    [
        FixedKernel::sobel_x(),
        FixedKernel::sobel_y(),
        FixedKernel::sobel_diag1(),
        FixedKernel::sobel_diag2(),
        FixedKernel::laplacian4(),
        FixedKernel::laplacian8(),
    ]
    .into_iter()
    .map(|t| t.values)
    .collect()
}

/// Scores one `k×k` kernel. `layer_max` is the largest magnitude in its
/// layer and sets the zero cutoff. Layer name and channel are left blank.
pub fn score_kernel(values: &[f64], k: usize, layer_max: f64, t: &Thresholds) -> KernelScore {
    let (identity, lowpass, edge, zero, class) = scores(values, k, layer_max, t);
    KernelScore {
        layer: String::new(),
        channel: 0,
        identity,
        lowpass,
        edge,
        zero,
        class,
        values: values.to_vec(),
    }
}

fn scores(values: &[f64], k: usize, layer_max: f64, t: &Thresholds) -> (f64, f64, f64, f64, KernelClass) {
    assert_eq!(values.len(), k * k, "kernel needs k*k values");
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let zero = if max_abs < t.zero_relative * (layer_max + 1e-12) { 1.0 } else { 0.0 };
    if zero == 1.0 {
        return (0.0, 0.0, 0.0, 1.0, KernelClass::Zero);
    }
    let l1: f64 = values.iter().map(|v| v.abs()).sum();
    let c = k / 2;
    let identity_stencil: Vec<f64> = (0..k * k).map(|i| if i == c * k + c { 1.0 } else { 0.0 }).collect();
    let dc = values.iter().sum::<f64>();
    // Centering alone cannot tell a delta from a Laplacian, so require DC too.
    let identity = centered_cosine(values, &identity_stencil).abs() * dc.abs() / l1;

    let nyq = values
        .iter()
        .enumerate()
        .map(|(i, v)| if (i / k + i % k).is_multiple_of(2) { *v } else { -*v })
        .sum::<f64>();
    let lowpass = (dc.abs() / l1) * (1.0 - nyq.abs() / l1);

    let edge = if dc.abs() < t.edge_dc * l1 {
        edge_templates(k)
            .iter()
            .map(|tpl| centered_cosine(values, tpl).abs())
            .fold(0.0, f64::max)
    } else {
        0.0
    };

    let class = [
        (KernelClass::Identity, identity, t.identity),
        (KernelClass::Lowpass, lowpass, t.lowpass),
        (KernelClass::Edge, edge, t.edge),
    ]
    .into_iter()
    .filter(|&(_, s, th)| s >= th)
    .max_by(|a, b| a.1.total_cmp(&b.1))
    .map_or(KernelClass::Other, |(c, _, _)| c);
    (identity, lowpass, edge, zero, class)
}

pub const HISTOGRAM_BINS: usize = 61;

/// Counts over `[−μ, μ]` in equal bins, `μ` the largest magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub mu: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: &[f64], bins: usize) -> Self {
        let mu = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut counts = vec![0; bins];
        for v in values {
            let i = if mu == 0.0 {
                bins / 2
            } else {
                (((v + mu) / (2.0 * mu)) * bins as f64).floor() as usize
            };
            counts[i.min(bins - 1)] += 1;
        }
        Histogram { mu, counts }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTaxonomy {
    pub name: String,
    pub kernel_size: usize,
    pub kernels: Vec<KernelScore>,
    pub histogram: Histogram,
}

impl LayerTaxonomy {
    pub fn counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for k in &self.kernels {
            c[k.class.index()] += 1;
        }
        c
    }

    pub fn fraction(&self, class: KernelClass) -> f64 {
        self.counts()[class.index()] as f64 / self.kernels.len().max(1) as f64
    }
}

/// Scores every `C×K×K` kernel stack of one layer.
pub fn analyze_layer(name: &str, k: usize, values: &[f64], t: &Thresholds) -> LayerTaxonomy {
    let layer_max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let kernels = values
        .chunks(k * k)
        .enumerate()
        .map(|(channel, kv)| KernelScore {
            layer: name.to_string(),
            channel,
            ..score_kernel(kv, k, layer_max, t)
        })
        .collect();
    LayerTaxonomy {
        name: name.to_string(),
        kernel_size: k,
        kernels,
        histogram: Histogram::of(values, HISTOGRAM_BINS),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaxonomyReport {
    pub layers: Vec<LayerTaxonomy>,
}

impl TaxonomyReport {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn kernel_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernels.len()).sum()
    }

    pub fn counts(&self) -> [usize; 5] {
        self.layers.iter().fold([0; 5], |mut acc, l| {
            for (a, c) in acc.iter_mut().zip(l.counts()) {
                *a += c;
            }
            acc
        })
    }

    pub fn fraction(&self, class: KernelClass) -> f64 {
        self.counts()[class.index()] as f64 / self.kernel_count().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,channel,class,score_identity,score_lowpass,score_edge,score_zero\n");
        for k in self.layers.iter().flat_map(|l| &l.kernels) {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                k.layer,
                k.channel,
                k.class.name(),
                k.identity,
                k.lowpass,
                k.edge,
                k.zero
            );
        }
        s
    }

    pub fn histograms_csv(&self) -> String {
        let mut s = String::from("layer,mu");
        for i in 0..HISTOGRAM_BINS {
            let _ = write!(s, ",bin{i}");
        }
        s.push('\n');
        for l in &self.layers {
            let _ = write!(s, "{},{:e}", l.name, l.histogram.mu);
            for c in &l.histogram.counts {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{:<16} {:>6}", "layer", "count");
        for c in KernelClass::ALL {
            let _ = write!(s, " {:>9}", c.name());
        }
        s.push('\n');
        let mut row = |name: &str, n: usize, fr: &dyn Fn(KernelClass) -> f64| {
            let _ = write!(s, "{name:<16} {n:>6}");
            for c in KernelClass::ALL {
                let _ = write!(s, " {:>9.3}", fr(c));
            }
            s.push('\n');
        };
        for l in &self.layers {
            row(&l.name, l.kernels.len(), &|c| l.fraction(c));
        }
        row("total", self.kernel_count(), &|c| self.fraction(c));
        s
    }
}

/// Depthwise layers are the `[C, 1, K, K]` tensors with odd `K > 1`.
pub fn analyze_checkpoint(ckpt: &Checkpoint, t: &Thresholds) -> TaxonomyReport {
    let layers = ckpt
        .tensors
        .iter()
        .filter_map(|r| match r.dims[..] {
            [_, 1, k, k2] if k == k2 && k > 1 && k % 2 == 1 => {
                let values: Vec<f64> = r.data.iter().map(|&v| v as f64).collect();
                Some(analyze_layer(&r.name, k as usize, &values, t))
            }
            _ => None,
        })
        .collect();
    TaxonomyReport { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{edge_kernel_bank, gaussian_kernel, BankVariant};

    fn class_of(v: &[f64]) -> KernelClass {
        let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        score_kernel(v, 3, max, &Thresholds::default()).class
    }

    #[test]
    fn identity_stencil() {
        let id = FixedKernel::identity(3).unwrap().values;
        let s = score_kernel(&id, 3, 1.0, &Thresholds::default());
        assert!((s.identity - 1.0).abs() < 1e-12);
        assert_eq!(s.lowpass, 0.0);
        assert_eq!(class_of(&id), KernelClass::Identity);
    }

    #[test]
    fn gaussian_is_lowpass() {
        let g = gaussian_kernel(3, 1.0).unwrap().values;
        let s = score_kernel(&g, 3, 1.0, &Thresholds::default());
        assert!(s.lowpass > 0.95 && s.edge == 0.0);
        assert_eq!(class_of(&g), KernelClass::Lowpass);
    }

    #[test]
    fn scaled_negated_sobel_is_edge() {
        let s: Vec<f64> = FixedKernel::sobel_x().values.iter().map(|v| -2.5 * v).collect();
        let edge = score_kernel(&s, 3, 10.0, &Thresholds::default()).edge;
        assert!((edge - 1.0).abs() < 1e-12);
        assert_eq!(class_of(&s), KernelClass::Edge);
    }

    #[test]
    fn all_zero_layer_is_zero_without_nan() {
        let layer = analyze_layer("z", 3, &[0.0; 27], &Thresholds::default());
        assert!(layer.kernels.iter().all(|k| k.class == KernelClass::Zero));
        assert_eq!(layer.histogram.counts[30], 27);
    }

    #[test]
    fn bank_tile_is_six_edges_two_blurs() {
        let bank = edge_kernel_bank(BankVariant::Ek6Gk2);
        let values: Vec<f64> = bank.kernels().iter().flat_map(|k| k.values.clone()).collect();
        let layer = analyze_layer("bank", 3, &values, &Thresholds::default());
        assert_eq!(layer.counts(), [0, 2, 6, 0, 0]);
    }

    #[test]
    fn histogram_edges() {
        let h = Histogram::of(&[-1.0, 0.0, 1.0], 61);
        assert_eq!((h.counts[0], h.counts[30], h.counts[60]), (1, 1, 1));
        assert_eq!(h.counts.iter().sum::<usize>(), 3);
    }
}
