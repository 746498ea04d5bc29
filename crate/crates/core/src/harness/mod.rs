//! Synthetic miscalibration experiments: scene generation, perturbation
//! injection, descent through the differentiable splatting path, evaluation,
//! sweeps and the finite-difference suites.
//!
//! The descent minimizes `-NCC` between the splatted radar weight map and a
//! target occupancy raster. This surrogate stands in for a detection loss.

mod config;
mod evaluate;
mod refine;
mod scene;
mod suites;
mod sweep;

pub use config::HarnessConfig;
pub use evaluate::{evaluate, histogram, inject_miscalibration, mean_std, median, reduction, Axis, Histogram, Metrics};
pub use refine::{
    conditioning_report, refine_descent, scene_points, ConditioningReport, DescentOptions, Objective,
    RefineOutcome, StageTrace, AXIS_NAMES, splat_scene,
};
pub use scene::{default_t_true, generate_scene, Scatterer, SceneSpec, SyntheticScene};
pub use suites::{
    crossmodal_gradient_suite, splat_gradient_suite, CrossModalSuiteEntry, SplatSuiteReport, GRAD_FLOOR, GRID_LINE_MARGIN, SPLAT_FD_STEP,
};
pub use sweep::{
    run_point, run_sweep, sweep_points, PerturbationBox, SummaryRow, SweepPoint, SweepRecord, SweepReport,
    SweepResult, SweepRow, SweepSpec, SURROGATE_NOTE,
};
