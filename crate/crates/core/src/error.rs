use std::path::PathBuf;

use crate::physics::MeasurementSetting;

/// Errors produced anywhere in the calibration stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("out of pulse window: t = {t:e} s outside [0, {duration:e}] s")]
    OutOfPulseWindow { t: f64, duration: f64 },

    #[error("truncation too small: {leakage:.3e} population in the top two Fock levels (n_max = {n_max})")]
    TruncationTooSmall { leakage: f64, n_max: usize },

    #[error("integrator step too coarse: norm drift {drift:.3e}")]
    IntegratorStepTooCoarse { drift: f64 },

    #[error("analytic form invalid: requires centerline = 0 and a constant pulse")]
    AnalyticFormInvalid,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid build failed at {} node(s); first failure at node {first_index}: {first_error}", failures)]
    GridBuildFailed {
        failures: usize,
        first_index: usize,
        first_error: String,
    },

    #[error("unsupported grid file: {0}")]
    UnsupportedGridFile(String),

    #[error("corrupt grid file: {0}")]
    CorruptGridFile(String),

    #[error("outside grid support")]
    OutsideGridSupport,

    #[error("posterior collapsed: every particle weight underflowed (log-likelihood max {max_log_likelihood})")]
    PosteriorCollapsed { max_log_likelihood: f64 },

    #[error("invalid estimate, feedback refused: {0}")]
    FeedbackRefused(String),

    #[error("insufficient sample: {got} records, need at least {need}")]
    InsufficientSample { got: usize, need: usize },

    #[error("missing grid for setting {setting} at {}", path.display())]
    MissingGrid {
        setting: MeasurementSetting,
        path: PathBuf,
    },

    #[error("no likelihood grid loaded for setting {0}")]
    NoGridForSetting(MeasurementSetting),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
