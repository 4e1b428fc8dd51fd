//! Evaluation: stratified velocity metrics, feature PCA and slice images.

pub mod metrics;
pub mod pca;
pub mod slices;

pub use metrics::{
    compute_metrics, export_report, parse_report_csv, report_csv, voxel_metrics, MetricsReport, SnrScope, StratumRow,
    TimeScope, VoxelMetrics,
};
pub use pca::{extract_features, pca_project, FeatureSample, PcaResult, Tap};
pub use slices::{slice_values, to_gray, write_pgm, SliceQuantity};
