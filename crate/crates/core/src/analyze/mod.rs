//! Kernel taxonomy, weight histograms, adjacent-layer feature similarity and
//! image grids for inspecting trained depthwise layers.

pub mod pgm;
pub mod similarity;
pub mod taxonomy;

pub use pgm::{feature_grid, grid_dims, kernel_grid, GrayImage, Grid};
pub use similarity::{feature_similarity, layer_similarity, SimilarityMatrix};
pub use taxonomy::{
    analyze_checkpoint, analyze_layer, centered_cosine, score_kernel, Histogram, KernelClass, KernelScore,
    LayerTaxonomy, TaxonomyReport, Thresholds, HISTOGRAM_BINS,
};
