//! Distances between real and synthetic beats and beat sets.

mod distance;
mod features;
mod fid;
mod report;

pub use distance::{dtw, emd_1d, mae, median_bandwidth, mmd, rmse, wasserstein_1d, Mmd};
pub use features::{extract_features, statistical_features, ExtractorKind, FeatureMap, N_BANDS, STATISTICAL_DIM};
pub use fid::{fid, frechet_distance, moments, sqrt_psd, symmetric_eigen};
pub use report::{evaluate_sets, EvalOptions, MetricRow, MetricsReport, Pairing};
