//! Residual miscalibration at the end of calibration runs.

use serde::{Deserialize, Serialize};

use super::infidelity::miscalibration_infidelity;
use crate::calibrator::CalibrationRecord;
use crate::physics::{wrap_phase, GateParams, ModelConfig};
use crate::{Error, Result};

/// Accepted runs needed for an endpoint distribution.
pub const MIN_ENDPOINT_RUNS: usize = 20;

/// Offsets of `params` from the optimum of a gate of length `gate_time`:
/// `(Ω/Ω_opt − 1, ω_cl, δ − δ_opt, Δφ)`.
pub fn miscalibration(params: &GateParams, gate_time: f64, model: &ModelConfig) -> [f64; 4] {
    let m = model.with_gate_time(gate_time);
    [
        params.rabi / m.rabi_opt() - 1.0,
        params.centerline,
        params.sideband - m.sideband_opt(),
        wrap_phase(params.phase_step),
    ]
}

/// Gate parameters carrying `offset` (as returned by [`miscalibration`])
/// at the optimum of `model`.
pub fn offset_from_optimum(offset: &[f64; 4], model: &ModelConfig) -> GateParams {
    let opt = model.optimal();
    GateParams::new(
        opt.rabi * (1.0 + offset[0]),
        offset[1],
        opt.sideband + offset[2],
        wrap_phase(offset[3]),
    )
}

/// Logarithmic histogram of infidelities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Values below the first edge.
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    /// `bins` log-spaced bins between `lo` and `hi`.
    pub fn log(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let (a, b) = (lo.log10(), hi.log10());
        let edges: Vec<f64> = (0..=bins).map(|i| 10f64.powf(a + (b - a) * i as f64 / bins as f64)).collect();
        let mut counts = vec![0; bins];
        let (mut underflow, mut overflow) = (0, 0);
        for &v in values {
            if v < lo {
                underflow += 1;
            } else if v >= hi {
                overflow += 1;
            } else {
                let i = (((v.log10() - a) / (b - a)) * bins as f64) as usize;
                counts[i.min(bins - 1)] += 1;
            }
        }
        Self {
            edges,
            counts,
            underflow,
            overflow,
        }
    }
}

/// Per-run infidelities and their median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointReport {
    pub offsets: Vec<[f64; 4]>,
    pub infidelities: Vec<f64>,
    pub median: f64,
    pub histogram: Histogram,
}

/// Infidelity of each offset vector applied jointly at the optimum.
pub fn infidelity_distribution(offsets: &[[f64; 4]], model: &ModelConfig) -> Result<EndpointReport> {
    if offsets.is_empty() {
        return Err(Error::InsufficientSample { got: 0, need: 1 });
    }
    let infidelities: Vec<f64> = offsets
        .iter()
        .map(|o| miscalibration_infidelity(&offset_from_optimum(o, model), model))
        .collect::<Result<_>>()?;
    Ok(EndpointReport {
        offsets: offsets.to_vec(),
        median: median(&infidelities),
        histogram: Histogram::log(&infidelities, 1e-5, 1e-1, 24),
        infidelities,
    })
}

/// Spread of the accepted runs' final parameters about their mean, mapped
/// through the joint infidelity.
///
/// Each run's realized parameters are first expressed relative to the
/// optimum of its own final gate time, so runs against different hidden
/// truths are comparable.
pub fn endpoint_infidelity_distribution(records: &[CalibrationRecord], model: &ModelConfig) -> Result<EndpointReport> {
    let raw: Vec<[f64; 4]> = records
        .iter()
        .filter(|r| r.accepted())
        .map(|r| miscalibration(&r.final_params, r.final_control.gate_time, model))
        .collect();
    if raw.len() < MIN_ENDPOINT_RUNS {
        return Err(Error::InsufficientSample {
            got: raw.len(),
            need: MIN_ENDPOINT_RUNS,
        });
    }
    let n = raw.len() as f64;
    let mut mean = [0.0; 4];
    for o in &raw {
        for d in 0..3 {
            mean[d] += o[d] / n;
        }
    }
    let (s, c) = raw.iter().fold((0.0, 0.0), |(s, c), o| (s + o[3].sin(), c + o[3].cos()));
    mean[3] = s.atan2(c);
    let centred: Vec<[f64; 4]> = raw
        .iter()
        .map(|o| {
            [
                o[0] - mean[0],
                o[1] - mean[1],
                o[2] - mean[2],
                wrap_phase(o[3] - mean[3]),
            ]
        })
        .collect();
    infidelity_distribution(&centred, model)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
