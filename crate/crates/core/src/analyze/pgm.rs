//! Binary greyscale (P5) grids of kernels and feature maps.
//!
//! Tiles sit in a near-square grid, `ceil(√n)` columns, separated and
//! framed by 1-pixel black lines. Kernel tiles map 0 to grey 128 and the
//! tile's largest magnitude to 1 or 255; feature tiles stretch their own
//! min..max over 0..255.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// A rendered grid plus per-tile `(min, max)` of the source values.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub image: GrayImage,
    pub cols: usize,
    pub rows: usize,
    pub ranges: Vec<(f64, f64)>,
}

impl Grid {
    pub fn ranges_csv(&self) -> String {
        let mut s = String::from("tile,row,col,min,max\n");
        for (i, (lo, hi)) in self.ranges.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{lo:e},{hi:e}", i / self.cols, i % self.cols);
        }
        s
    }

    /// Writes the PGM and a `.csv` sidecar next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.image.write(path)?;
        let csv = path.with_extension("csv");
        std::fs::write(&csv, self.ranges_csv()).map_err(|e| Error::io(&csv, e))
    }
}

pub fn grid_dims(n: usize) -> (usize, usize) {
    let cols = ((n as f64).sqrt().ceil() as usize).max(1);
    (cols, n.div_ceil(cols).max(1))
}

fn render(tiles: &[&[f64]], tw: usize, th: usize, shade: impl Fn(f64, f64, f64) -> u8) -> Grid {
    let (cols, rows) = grid_dims(tiles.len());
    let width = cols * (tw + 1) + 1;
    let height = rows * (th + 1) + 1;
    let mut pixels = vec![0u8; width * height];
    let mut ranges = Vec::with_capacity(tiles.len());
    for (i, tile) in tiles.iter().enumerate() {
        let lo = tile.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = tile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ranges.push((lo, hi));
        let (ox, oy) = (1 + (i % cols) * (tw + 1), 1 + (i / cols) * (th + 1));
        for y in 0..th {
            for x in 0..tw {
                pixels[(oy + y) * width + ox + x] = shade(tile[y * tw + x], lo, hi);
            }
        }
    }
    Grid {
        image: GrayImage { width, height, pixels },
        cols,
        rows,
        ranges,
    }
}

pub fn kernel_grid(kernels: &[Vec<f64>], k: usize) -> Grid {
    let tiles: Vec<&[f64]> = kernels.iter().map(Vec::as_slice).collect();
    render(&tiles, k, k, |v, lo, hi| {
        let m = lo.abs().max(hi.abs());
        if m == 0.0 {
            128
        } else {
            (128.0 + 127.0 * v / m).round().clamp(0.0, 255.0) as u8
        }
    })
}

pub fn feature_grid(maps: &[Vec<f64>], h: usize, w: usize) -> Grid {
    let tiles: Vec<&[f64]> = maps.iter().map(Vec::as_slice).collect();
    render(&tiles, w, h, |v, lo, hi| {
        if hi > lo {
            (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    })
}
