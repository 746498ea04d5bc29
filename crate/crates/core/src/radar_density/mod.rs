//! Doppler-guided persistence density on a range-azimuth grid.
//!
//! Per frame, detections are weighted by standardized log intensity and a
//! Gaussian Doppler gate, then bilinearly splatted onto the grid. A window of
//! frames is blurred, mixed with exponentially decaying weights, multiplied by
//! a persistence factor derived from per-cell occupancy counts and finally
//! min-max normalized.

mod density;
mod detection;
mod grid;
mod ingest;
mod params;

pub use density::{
    accumulate_window, build_density, detection_weight, doppler_weight, ego_compensate,
    intensity_weight, persistence_combine, splat_frame, window_weights, DensityOutput,
    EgoCompensated, FrameSplat, NORM_EPS,
};
pub use detection::{wrap_angle, RadarDetection};
pub use grid::{gaussian_blur, gaussian_taps, FrequencyMap, GridSpec, RAGrid};
pub use ingest::{group_by_frame, read_detections, read_detections_csv, read_detections_jsonl};
pub use params::{DensityParams, IntensityStats, PersistenceMode};
