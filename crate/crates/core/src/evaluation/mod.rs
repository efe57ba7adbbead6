//! Calibration quality measures: the infidelity left by mis-set parameters,
//! endpoint statistics, capture range and the manual-scan baseline.

mod baseline;
mod endpoint;
mod infidelity;
mod report;
mod study;

pub use baseline::{
    binomial_weights, centre_error_fraction, fit_gaussian, manual_baseline, BaselineRecord, GaussianFit, ScanKind,
    ScanRecord, ScanWidths, SCAN_POINTS, SHOTS_PER_POINT,
};
pub use endpoint::{
    endpoint_infidelity_distribution, infidelity_distribution, miscalibration, offset_from_optimum, EndpointReport,
    Histogram, MIN_ENDPOINT_RUNS,
};
pub use infidelity::{
    average_infidelity, benchmark_infidelity, infidelity_curve, miscalibration_infidelity, offset_params, process_fidelity, BenchmarkConfig, InfidelityCurve,
};
pub use report::write_csv;
pub use study::{
    captured, job_seed, starting_distance, truth_at, truth_in_ball, truth_on_shell, wilson_interval, CaptureCell,
    CaptureReport, StudySetup,
};
