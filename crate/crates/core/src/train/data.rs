//! In-memory datasets: the CIFAR binary layout and two synthetic generators.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const CIFAR10: Normalization = Normalization {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };
    pub const CIFAR100: Normalization = Normalization {
        mean: [0.5071, 0.4865, 0.4409],
        std: [0.2673, 0.2564, 0.2762],
    };
    /// For synthetic images centred on mid-grey.
    pub const MID_GREY: Normalization = Normalization {
        mean: [0.5; 3],
        std: [0.25; 3],
    };
    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    CifarBinary,
    SyntheticEdges,
    SyntheticBlobs,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::CifarBinary => "cifar",
            DatasetKind::SyntheticEdges => "edges",
            DatasetKind::SyntheticBlobs => "blobs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar" | "cifar10" | "cifar_binary" => Some(DatasetKind::CifarBinary),
            "edges" | "synthetic_edges" => Some(DatasetKind::SyntheticEdges),
            "blobs" | "synthetic_gaussian_blobs" => Some(DatasetKind::SyntheticBlobs),
            _ => None,
        }
    }
}

/// Normalized `N×3×R×R` images with integer labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let s = images.shape();
        if s.c != 3 || labels.len() != s.n {
            return Err(Error::dim(format!("{} labels for images {s}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::arg(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.images.shape().h
    }

    /// Gathers the listed samples into one batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let s = self.images.shape();
        let per = s.sample();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.images.sample(i));
        }
        let images = Tensor::new(Shape::new(indices.len(), s.c, s.h, s.w), data).expect("sizes agree");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }
}

fn normalize_into(pixels: impl Iterator<Item = f32>, channel_len: usize, norm: &Normalization, out: &mut Vec<f32>) {
    for (i, v) in pixels.enumerate() {
        let c = (i / channel_len) % 3;
        out.push((v - norm.mean[c]) / norm.std[c]);
    }
}

/// Decodes CIFAR binary records: `label_bytes` label bytes (the last one is
/// used) followed by 3072 bytes of R, G, B planes in row-major order.
pub fn decode_cifar(bytes: &[u8], label_bytes: usize, num_classes: usize, norm: &Normalization) -> Result<Dataset> {
    if !(1..=2).contains(&label_bytes) {
        return Err(Error::arg(format!("CIFAR records carry 1 or 2 label bytes, not {label_bytes}")));
    }
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.len() % record != 0 || bytes.is_empty() {
        let expected = bytes.len().div_ceil(record).max(1) * record;
        return Err(Error::format(
            (bytes.len() / record * record) as u64,
            format!(
                "CIFAR file holds {} bytes, expected a multiple of {record} (next whole size {expected})",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / record;
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_bytes - 1] as usize;
        if label >= num_classes {
            return Err(Error::format(
                (i * record + label_bytes - 1) as u64,
                format!("label {label} outside {num_classes} classes"),
            ));
        }
        labels.push(label);
        let pixels = rec[label_bytes..].iter().map(|&b| b as f32 / 255.0);
        normalize_into(pixels, CIFAR_SIDE * CIFAR_SIDE, norm, &mut data);
    }
    Dataset::new(Tensor::new(Shape::new(n, 3, CIFAR_SIDE, CIFAR_SIDE), data)?, labels, num_classes)
}

/// Inverse of [`decode_cifar`] for raw `[0, 255]` planes.
pub fn encode_cifar(images: &[[u8; CIFAR_PIXELS]], labels: &[u8], label_bytes: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(images.len() * (label_bytes + CIFAR_PIXELS));
    for (img, &label) in images.iter().zip(labels) {
        out.extend(std::iter::repeat_n(0, label_bytes - 1));
        out.push(label);
        out.extend_from_slice(img);
    }
    out
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads the standard CIFAR-10 (`data_batch_{1..5}.bin`, `test_batch.bin`)
/// or CIFAR-100 (`train.bin`, `test.bin`) binary distribution.
pub fn load_cifar(dir: &Path, split: Split, norm: &Normalization) -> Result<Dataset> {
    let c100 = dir.join("train.bin").exists() || dir.join("test.bin").exists();
    let (files, label_bytes, classes): (Vec<String>, usize, usize) = match (c100, split) {
        (false, Split::Train) => ((1..=5).map(|i| format!("data_batch_{i}.bin")).collect(), 1, 10),
        (false, Split::Test) => (vec!["test_batch.bin".into()], 1, 10),
        (true, Split::Train) => (vec!["train.bin".into()], 2, 100),
        (true, Split::Test) => (vec!["test.bin".into()], 2, 100),
    };
    let mut bytes = Vec::new();
    for f in files {
        let path = dir.join(f);
        let chunk = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let record = label_bytes + CIFAR_PIXELS;
        if chunk.len() % record != 0 {
            return Err(Error::format(
                (chunk.len() / record * record) as u64,
                format!(
                    "{}: {} bytes, expected {} ({} whole records of {record})",
                    path.display(),
                    chunk.len(),
                    chunk.len() / record * record,
                    chunk.len() / record
                ),
            ));
        }
        bytes.extend(chunk);
    }
    decode_cifar(&bytes, label_bytes, classes, norm)
}

/// Step edges in four orientations (0°, 45°, 90°, 135°) with random offset
/// and polarity, buried in per-pixel Gaussian noise.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EdgeParams {
    pub resolution: usize,
    /// Step height in `[0, 1]` intensity units.
    pub contrast: f32,
    pub noise: f32,
    /// Largest distance of the edge from the image centre, as a fraction of
    /// the resolution.
    pub max_offset: f32,
}

impl Default for EdgeParams {
    fn default() -> Self {
        EdgeParams {
            resolution: 32,
            contrast: 0.2,
            noise: 0.3,
            max_offset: 0.25,
        }
    }
}

pub const EDGE_CLASSES: usize = 4;

fn finish(raw: Vec<f32>, n: usize, res: usize, labels: Vec<usize>, classes: usize, norm: &Normalization) -> Dataset {
    let mut data = Vec::with_capacity(raw.len());
    normalize_into(raw.into_iter().map(|v| v.clamp(0.0, 1.0)), res * res, norm, &mut data);
    Dataset::new(Tensor::new(Shape::new(n, 3, res, res), data).expect("sizes agree"), labels, classes)
        .expect("labels in range")
}

pub fn synthetic_edges(n: usize, params: EdgeParams, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, params.noise.max(0.0)).expect("finite std");
    let res = params.resolution;
    let mut raw = Vec::with_capacity(n * 3 * res * res);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % EDGE_CLASSES;
        let theta = class as f32 * std::f32::consts::FRAC_PI_4;
        let (nx, ny) = (theta.cos(), theta.sin());
        let offset = rng.random_range(-1.0..=1.0) * params.max_offset * res as f32;
        let polarity = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let centre = (res as f32 - 1.0) / 2.0;
        let mut plane = Vec::with_capacity(res * res);
        for y in 0..res {
            for x in 0..res {
                let d = (x as f32 - centre) * nx + (y as f32 - centre) * ny - offset;
                let step = if d >= 0.0 { 0.5 } else { -0.5 };
                plane.push(0.5 + polarity * params.contrast * step + noise.sample(&mut rng));
            }
        }
        for _ in 0..3 {
            raw.extend_from_slice(&plane);
        }
        labels.push(class);
    }
    finish(raw, n, res, labels, EDGE_CLASSES, &Normalization::MID_GREY)
}

/// One bright Gaussian blob whose position on a ring encodes the class.
pub fn synthetic_gaussian_blobs(n: usize, num_classes: usize, resolution: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.1).expect("finite std");
    let res = resolution as f32;
    let sigma = res / 8.0;
    let mut raw = Vec::with_capacity(n * 3 * resolution * resolution);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes.max(1);
        let angle = std::f32::consts::TAU * class as f32 / num_classes as f32;
        let cx = res / 2.0 + res / 4.0 * angle.cos() + rng.random_range(-1.5..1.5);
        let cy = res / 2.0 + res / 4.0 * angle.sin() + rng.random_range(-1.5..1.5);
        let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
        for t in tint {
            for y in 0..resolution {
                for x in 0..resolution {
                    let r2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                    raw.push(0.2 + 0.7 * t * (-r2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng));
                }
            }
        }
        labels.push(class);
    }
    finish(raw, n, resolution, labels, num_classes, &Normalization::MID_GREY)
}

/// Random crop from a zero-padded copy plus a horizontal flip, in place.
pub fn augment(batch: &mut Tensor<f32>, pad: usize, rng: &mut impl Rng) {
    let s = batch.shape();
    let (h, w) = (s.h, s.w);
    let mut src = vec![0.0f32; s.c * h * w];
    for n in 0..s.n {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let flip = rng.random_bool(0.5);
        let sample = &mut batch.data_mut()[n * s.sample()..(n + 1) * s.sample()];
        src.copy_from_slice(sample);
        for c in 0..s.c {
            for y in 0..h {
                for x in 0..w {
                    let sy = y as isize + dy;
                    let sx0 = if flip { w - 1 - x } else { x };
                    let sx = sx0 as isize + dx;
                    let inside = sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w;
                    sample[(c * h + y) * w + x] = if inside {
                        src[(c * h + sy as usize) * w + sx as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

/// Seeded permutation of `0..n`.
pub fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar_first_pixel_and_record_count() {
        let mut img = [0u8; CIFAR_PIXELS];
        img[0] = 255;
        let bytes = encode_cifar(&[img, [7; CIFAR_PIXELS]], &[3, 9], 1);
        assert_eq!(bytes.len() / 3073, 2);
        let ds = decode_cifar(&bytes, 1, 10, &Normalization::IDENTITY).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.images.at(0, 0, 0, 0), 1.0);
        assert_eq!(ds.images.at(1, 2, 31, 31), 7.0 / 255.0);
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let bytes = encode_cifar(&[[0; CIFAR_PIXELS]], &[42], 2);
        assert_eq!(bytes.len(), 3074);
        let ds = decode_cifar(&bytes, 2, 100, &Normalization::IDENTITY).unwrap();
        assert_eq!(ds.labels, vec![42]);
    }

    #[test]
    fn truncated_cifar_reports_sizes() {
        let bytes = vec![0u8; 3073 + 100];
        let err = decode_cifar(&bytes, 1, 10, &Normalization::IDENTITY).unwrap_err().to_string();
        assert!(err.contains("3173") && err.contains("3073"), "{err}");
    }

    #[test]
    fn edges_are_balanced_and_deterministic() {
        let a = synthetic_edges(40, EdgeParams::default(), 5);
        let b = synthetic_edges(40, EdgeParams::default(), 5);
        assert_eq!(a.images.data(), b.images.data());
        for c in 0..EDGE_CLASSES {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 10);
        }
    }

    #[test]
    fn noiseless_vertical_edge_is_a_step() {
        let p = EdgeParams {
            noise: 0.0,
            max_offset: 0.0,
            contrast: 0.8,
            resolution: 8,
        };
        let ds = synthetic_edges(1, p, 0);
        let row: Vec<f32> = (0..8).map(|x| ds.images.at(0, 0, 3, x)).collect();
        assert!(row[..4].iter().all(|&v| v == row[0]) && row[4..].iter().all(|&v| v == row[7]));
        assert!((row[0] - row[7]).abs() > 3.0);
    }

    #[test]
    fn augment_with_zero_pad_only_flips() {
        let ds = synthetic_gaussian_blobs(4, 4, 8, 1);
        let mut b = ds.images.clone();
        augment(&mut b, 0, &mut ChaCha8Rng::seed_from_u64(0));
        for n in 0..4 {
            let same = b.sample(n) == ds.images.sample(n);
            let flipped = (0..8).all(|x| b.at(n, 1, 2, x) == ds.images.at(n, 1, 2, 7 - x));
            assert!(same || flipped);
        }
    }
}
