//! Metrics, coverage rasters, fingerprint localization and diagnostics.

mod diagnostics;
mod fingerprint;
mod metrics;
mod raster;

pub use diagnostics::{diagnostics, DiagnosticsReport};
pub use fingerprint::{
    build_fingerprint_db, grid_positions, knn_localize, localization_errors, localization_report, ErrorDims,
    FingerprintDb, Gateway, KnnEstimate, LocalizationReport, DEFAULT_FINGERPRINT_SPACING_M,
};
pub use metrics::{error_metrics, nearest_rank, MetricReport};
pub use raster::{
    coverage_grid, read_raster_binary, write_raster_binary, write_raster_csv, CoverageRaster, GridSpec, RasterField,
    NODATA,
};
