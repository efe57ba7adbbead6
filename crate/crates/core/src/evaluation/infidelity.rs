//! Gate error caused by mis-set parameters.
//!
//! One gate acts on the spins through the Kraus operators
//! `K_n = ⟨n| U |0⟩` of the motional ground state. The inter-gate phase
//! step of a sequence is carried by the gate as a trailing collective
//! z rotation, so a single gate sees all four parameters.

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::physics::spin::{self, SpinMatrix};
use crate::physics::{GateParams, MeasurementSetting, ModelConfig, SequenceRunner, SpinMotionState, MAX_ADAPTIVE_N_MAX};
use crate::{Error, Result};

/// Kraus operators of one gate on the spins.
fn kraus(theta: &GateParams, cfg: &ModelConfig) -> Result<Vec<SpinMatrix>> {
    let mut model = cfg.clone();
    let states = loop {
        let runner = SequenceRunner::new(theta, &model)?;
        let out: Result<Vec<SpinMotionState>> = (0..4)
            .map(|j| {
                let init = SpinMotionState::basis(model.n_max, j, 0);
                runner.run_state(&init, &MeasurementSetting::single(), 0.0)
            })
            .collect();
        match out {
            Err(Error::TruncationTooSmall { .. }) if model.n_max * 2 <= MAX_ADAPTIVE_N_MAX => {
                model = model.with_n_max(model.n_max * 2);
            }
            other => break other?,
        }
    };
    let levels = model.n_max + 1;
    let kick = spin::z_kick(theta.phase_step);
    Ok((0..levels)
        .map(|n| Matrix4::from_fn(|i, j| kick[i] * states[j].amplitudes[i * levels + n]))
        .collect())
}

/// Target gate: the ideal `π/2` entangler at laser phase zero.
fn target() -> SpinMatrix {
    spin::ideal_ms_unitary(-std::f64::consts::FRAC_PI_2, 0.0)
}

/// Process fidelity `Σ_n |Tr(V† K_n)|² / d²` against the ideal gate.
pub fn process_fidelity(theta: &GateParams, cfg: &ModelConfig) -> Result<f64> {
    let v = target().adjoint();
    let f: f64 = kraus(theta, cfg)?
        .iter()
        .map(|k| (v * k).trace().norm_sqr())
        .sum();
    Ok(f / 16.0)
}

/// Infidelity attributed to mis-set parameters: one minus the process
/// fidelity of a single gate, the quantity cycle benchmarking estimates.
pub fn miscalibration_infidelity(theta: &GateParams, cfg: &ModelConfig) -> Result<f64> {
    Ok((1.0 - process_fidelity(theta, cfg)?).clamp(0.0, 1.0))
}

/// One minus the average gate fidelity, `(d/(d+1))` times the process
/// infidelity.
pub fn average_infidelity(theta: &GateParams, cfg: &ModelConfig) -> Result<f64> {
    Ok(0.8 * miscalibration_infidelity(theta, cfg)?)
}

/// Infidelity along one parameter axis with the others optimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfidelityCurve {
    /// Index into `GateParams::NAMES`.
    pub parameter: usize,
    /// Offsets from the optimum (Ω as a fraction of `Ω_opt`).
    pub offsets: Vec<f64>,
    pub infidelity: Vec<f64>,
}

/// Scan `parameter` over `offsets` about `Θ_opt`. Rabi offsets are
/// relative to `Ω_opt`, the others absolute.
pub fn infidelity_curve(parameter: usize, offsets: &[f64], cfg: &ModelConfig) -> Result<InfidelityCurve> {
    if parameter >= 4 {
        return Err(Error::InvalidParameter(format!("parameter index {parameter}")));
    }
    let opt = cfg.optimal();
    let infidelity = offsets
        .iter()
        .map(|&x| miscalibration_infidelity(&offset_params(&opt, parameter, x), cfg))
        .collect::<Result<_>>()?;
    Ok(InfidelityCurve {
        parameter,
        offsets: offsets.to_vec(),
        infidelity,
    })
}

/// `opt` with one coordinate moved; the Rabi offset is relative.
pub fn offset_params(opt: &GateParams, parameter: usize, x: f64) -> GateParams {
    let mut a = opt.to_array();
    a[parameter] += if parameter == 0 { x * opt.rabi } else { x };
    GateParams::from_array(a)
}

/// Sequence lengths and sampling of the benchmarking cross-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub lengths: Vec<usize>,
    /// Random sequences per length.
    pub sequences: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            lengths: vec![2, 4, 8, 16],
            sequences: 60,
            seed: 0,
        }
    }
}

fn pauli(k: usize) -> Matrix2<Complex64> {
    let (o, l, i) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0));
    match k {
        0 => Matrix2::new(l, o, o, l),
        1 => Matrix2::new(o, l, l, o),
        2 => Matrix2::new(o, -i, i, o),
        _ => Matrix2::new(l, o, o, -l),
    }
}

/// Two-qubit Pauli `σ_a ⊗ σ_b` in the `(gg, ge, eg, ee)` basis.
fn pauli2(a: usize, b: usize) -> SpinMatrix {
    pauli(a).kronecker(&pauli(b))
}

/// Infidelity estimated by simulated benchmarking: random Pauli layers
/// interleaved with the gate, the ideal inverse at the end, and an
/// exponential fit of the ground-state survival against sequence length.
/// Reported on the process-infidelity scale, `(1 − f)(d² − 1)/d²`.
pub fn benchmark_infidelity(theta: &GateParams, cfg: &ModelConfig, bench: &BenchmarkConfig) -> Result<f64> {
    if bench.lengths.len() < 2 || bench.sequences == 0 {
        return Err(Error::InvalidParameter("benchmarking needs two lengths and some sequences".into()));
    }
    let kraus = kraus(theta, cfg)?;
    let v = target();
    let mut rng = ChaCha8Rng::seed_from_u64(bench.seed);
    let mut points = Vec::new();
    for &m in &bench.lengths {
        let mut survival = 0.0;
        for _ in 0..bench.sequences {
            let mut rho = SpinMatrix::zeros();
            rho[(0, 0)] = Complex64::new(1.0, 0.0);
            let mut ideal = SpinMatrix::identity();
            for _ in 0..m {
                let p = pauli2(rng.random_range(0..4), rng.random_range(0..4));
                rho = p * rho * p.adjoint();
                rho = kraus.iter().map(|k| k * rho * k.adjoint()).sum();
                ideal = v * p * ideal;
            }
            let inv = ideal.adjoint();
            survival += (inv * rho * ideal)[(0, 0)].re;
        }
        let f = survival / bench.sequences as f64 - 0.25;
        points.push((m as f64, f.max(1e-300).ln()));
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let slope = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / points.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    Ok(((1.0 - slope.exp()) * 15.0 / 16.0).clamp(0.0, 1.0))
}
