//! Manual tune-up by iterated one-dimensional scans, the reference point
//! for the shot cost of the Bayesian loop.

use serde::{Deserialize, Serialize};

use crate::filter::ShotCounts;
use crate::lab::{ControlParams, VirtualLab};
use crate::physics::{
    sequence_outcome_adaptive, wrap_phase, GateParams, MeasurementSetting, ModelConfig, PhaseTarget,
};
use crate::{Error, Result};

/// Points per scan.
pub const SCAN_POINTS: usize = 4;
/// Shots per scan point.
pub const SHOTS_PER_POINT: u32 = 50;

/// What a scan varies and what it looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    /// Wide sideband scan; maximize `4 p_gg p_ee`.
    SidebandCoarse,
    /// Centre line with one gate of twice the length; maximize `p_ee`.
    Centerline,
    /// Sideband at the gate time; balance `p_gg` and `p_ee` by maximizing
    /// `4 p_gg p_ee`.
    SidebandBalance,
    /// Gate time; maximize `1 − p_one`.
    GateTime,
    /// Phase step with two gates; maximize `p_ee`.
    Phase,
}

impl ScanKind {
    /// The scan order of the tune-up.
    pub const SCHEDULE: [ScanKind; 9] = [
        ScanKind::SidebandCoarse,
        ScanKind::Centerline,
        ScanKind::SidebandBalance,
        ScanKind::GateTime,
        ScanKind::SidebandBalance,
        ScanKind::GateTime,
        ScanKind::SidebandBalance,
        ScanKind::Centerline,
        ScanKind::Phase,
    ];

    fn knob(self, c: &ControlParams) -> f64 {
        match self {
            ScanKind::SidebandCoarse | ScanKind::SidebandBalance => c.f_sb,
            ScanKind::Centerline => c.f_cl,
            ScanKind::GateTime => c.gate_time,
            ScanKind::Phase => c.phi,
        }
    }

    fn with_knob(self, c: &ControlParams, x: f64) -> ControlParams {
        let mut c = *c;
        match self {
            ScanKind::SidebandCoarse | ScanKind::SidebandBalance => c.f_sb = x,
            ScanKind::Centerline => c.f_cl = x,
            ScanKind::GateTime => c.gate_time = x,
            ScanKind::Phase => c.phi = wrap_phase(x),
        }
        c
    }

    /// Control and setting actually sent to the experiment.
    fn probe(self, c: &ControlParams) -> (ControlParams, MeasurementSetting) {
        match self {
            ScanKind::Centerline => (
                ControlParams {
                    gate_time: 2.0 * c.gate_time,
                    ..*c
                },
                MeasurementSetting::single(),
            ),
            ScanKind::Phase => (*c, MeasurementSetting::new(2, PhaseTarget::Zero)),
            _ => (*c, MeasurementSetting::single()),
        }
    }

    fn observable(self, p: [f64; 3]) -> f64 {
        match self {
            ScanKind::GateTime => 1.0 - p[1],
            ScanKind::Centerline | ScanKind::Phase => p[2],
            ScanKind::SidebandCoarse | ScanKind::SidebandBalance => 4.0 * p[0] * p[2],
        }
    }
}

/// Half-widths of the scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanWidths {
    pub sideband_coarse: f64,
    pub centerline: f64,
    pub sideband: f64,
    pub gate_time: f64,
    pub phase: f64,
}

impl ScanWidths {
    fn get(&self, kind: ScanKind) -> f64 {
        match kind {
            ScanKind::SidebandCoarse => self.sideband_coarse,
            ScanKind::Centerline => self.centerline,
            ScanKind::SidebandBalance => self.sideband,
            ScanKind::GateTime => self.gate_time,
            ScanKind::Phase => self.phase,
        }
    }

    /// One standard deviation of each scan's peak in an ideally tuned
    /// model, so the four points span `±σ` about a centred peak. The coarse
    /// sideband scan is twice as wide as the fine one.
    pub fn from_model(model: &ModelConfig) -> Result<Self> {
        let c = ControlParams::nominal(model);
        let sd = |kind: ScanKind| peak_sigma(kind, &c, model);
        let sideband = sd(ScanKind::SidebandBalance)?;
        Ok(Self {
            sideband_coarse: 2.0 * sideband,
            centerline: sd(ScanKind::Centerline)?,
            sideband,
            gate_time: sd(ScanKind::GateTime)?,
            phase: sd(ScanKind::Phase)?,
        })
    }
}

fn ideal_observable(kind: ScanKind, c: &ControlParams, model: &ModelConfig) -> Result<f64> {
    let (probe, setting) = kind.probe(c);
    let theta = GateParams::new(model.rabi_opt(), probe.f_cl, probe.f_sb, probe.phi);
    let p = sequence_outcome_adaptive(&theta, &setting, &model.with_gate_time(probe.gate_time))?;
    Ok(kind.observable(p.to_array()))
}

/// Width of the Gaussian with the same height and curvature as the
/// observable at the ideal knob value, `σ = sqrt(−y / y'')`.
fn peak_sigma(kind: ScanKind, c: &ControlParams, model: &ModelConfig) -> Result<f64> {
    let x0 = kind.knob(c);
    let h = match kind {
        ScanKind::GateTime => 1e-3 * x0,
        ScanKind::Phase => 1e-2,
        _ => 0.02 * crate::physics::KHZ,
    };
    let y = |x: f64| ideal_observable(kind, &kind.with_knob(c, x), model);
    let (ym, y0, yp) = (y(x0 - h)?, y(x0)?, y(x0 + h)?);
    let curvature = (yp - 2.0 * y0 + ym) / (h * h);
    if !(curvature < 0.0) {
        return Err(Error::InvalidParameter(format!("{kind:?} observable has no peak at the optimum")));
    }
    Ok((-y0 / curvature).sqrt())
}

/// Result of a weighted Gaussian fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub centre: f64,
    pub sigma: f64,
}

/// Fit `A exp(−(x − c)²/(2s²))` to `(x, y)` by Levenberg-Marquardt with
/// weights `w`. `None` if the fit does not converge to a peak.
pub fn fit_gaussian(x: &[f64], y: &[f64], w: &[f64]) -> Option<GaussianFit> {
    let n = x.len();
    if n < 3 || y.len() != n || w.len() != n {
        return None;
    }
    let (xmin, xmax) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (x0, h) = (0.5 * (xmin + xmax), 0.5 * (xmax - xmin));
    if !(h > 0.0) {
        return None;
    }
    let u: Vec<f64> = x.iter().map(|v| (v - x0) / h).collect();
    let ysum: f64 = y.iter().map(|v| v.max(0.0)).sum();
    let c0 = if ysum > 0.0 {
        u.iter().zip(y).map(|(u, y)| u * y.max(0.0)).sum::<f64>() / ysum
    } else {
        0.0
    };
    let mut p = [y.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(1e-3), c0, 1.0];
    let model = |p: &[f64; 3], u: f64| p[0] * (-(u - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp();
    let chi2 = |p: &[f64; 3]| -> f64 { (0..n).map(|i| w[i] * (y[i] - model(p, u[i])).powi(2)).sum() };
    let mut lambda = 1e-3;
    let mut cost = chi2(&p);
    let mut converged = false;
    for _ in 0..200 {
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for i in 0..n {
            let e = (-(u[i] - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp();
            let d = u[i] - p[1];
            let j = nalgebra::Vector3::new(e, p[0] * e * d / (p[2] * p[2]), p[0] * e * d * d / p[2].powi(3));
            let r = y[i] - p[0] * e;
            jtj += w[i] * j * j.transpose();
            jtr += w[i] * r * j;
        }
        let mut improved = false;
        while lambda < 1e10 {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] *= 1.0 + lambda;
                a[(k, k)] += 1e-12;
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let c = chi2(&trial);
            if c.is_finite() && c <= cost {
                let small = step.norm() < 1e-10 * (1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt());
                p = trial;
                let rel = (cost - c) / cost.max(1e-300);
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if small || rel < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    let sigma = p[2].abs();
    if !converged || !(p[0] > 0.0) || !sigma.is_finite() || sigma > 10.0 || p[1].abs() > 1.5 {
        return None;
    }
    Some(GaussianFit {
        amplitude: p[0],
        centre: x0 + h * p[1],
        sigma: h * sigma,
    })
}

/// Weights from the binomial error of `shots` trials, with the error
/// floored at one count.
pub fn binomial_weights(y: &[f64], shots: u32) -> Vec<f64> {
    let n = f64::from(shots);
    y.iter()
        .map(|p| {
            let p = p.clamp(0.0, 1.0);
            1.0 / (p * (1.0 - p) / n).max(1.0 / (n * n))
        })
        .collect()
}

/// One scan of the tune-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub kind: ScanKind,
    pub points: Vec<f64>,
    pub counts: Vec<[u32; 3]>,
    /// Knob value set after the scan.
    pub result: f64,
    /// Whether the scan had to be widened.
    pub widened: bool,
    /// No acceptable fit even after widening; the best point was used.
    pub fallback: bool,
    pub shots: u64,
}

/// Outcome of a manual tune-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub scans: Vec<ScanRecord>,
    pub total_shots: u64,
    pub final_control: ControlParams,
    pub final_params: GateParams,
}

fn run_scan(lab: &mut VirtualLab, kind: ScanKind, c: &ControlParams, half: f64) -> Result<(Vec<f64>, Vec<[u32; 3]>, Vec<f64>)> {
    let x0 = kind.knob(c);
    let xs: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| x0 - half + 2.0 * half * i as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let mut counts = Vec::new();
    let mut ys = Vec::new();
    for &x in &xs {
        let (probe, setting) = kind.probe(&kind.with_knob(c, x));
        let k: ShotCounts = lab.run_shots(&probe, &setting, SHOTS_PER_POINT)?;
        let n = f64::from(k.total());
        let p = [f64::from(k.n_gg) / n, f64::from(k.n_one) / n, f64::from(k.n_ee) / n];
        ys.push(kind.observable(p));
        counts.push(k.to_array());
    }
    Ok((xs, counts, ys))
}

/// Run the nine-scan tune-up from `start`. A scan whose fit fails is
/// repeated once at twice the width; if that fails too the best point is
/// taken.
pub fn manual_baseline(lab: &mut VirtualLab, start: ControlParams, widths: &ScanWidths) -> Result<BaselineRecord> {
    let mut c = start;
    let mut scans = Vec::new();
    let mut total = 0u64;
    for kind in ScanKind::SCHEDULE {
        let mut half = widths.get(kind);
        let mut widened = false;
        let mut shots = 0u64;
        let (result, points, counts, fallback) = loop {
            let (xs, counts, ys) = run_scan(lab, kind, &c, half)?;
            shots += (SCAN_POINTS as u64) * u64::from(SHOTS_PER_POINT);
            let fit = fit_gaussian(&xs, &ys, &binomial_weights(&ys, SHOTS_PER_POINT));
            match fit {
                Some(f) if (f.centre - kind.knob(&c)).abs() <= half => break (f.centre, xs, counts, false),
                _ if !widened => {
                    widened = true;
                    half *= 2.0;
                }
                _ => {
                    let best = (0..xs.len()).max_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap_or(0);
                    break (xs[best], xs, counts, true);
                }
            }
        };
        if kind == ScanKind::GateTime && !(result > 0.0) {
            return Err(Error::FeedbackRefused(format!("gate time {result}")));
        }
        c = kind.with_knob(&c, result);
        total += shots;
        scans.push(ScanRecord {
            kind,
            points,
            counts,
            result: kind.knob(&c),
            widened,
            fallback,
            shots,
        });
    }
    Ok(BaselineRecord {
        scans,
        total_shots: total,
        final_control: c,
        final_params: lab.realized(&c),
    })
}

/// Distribution of an ideal Gaussian's fitted centre, as a fraction of its
/// width, for points spanning `±σ` with binomial noise.
pub fn centre_error_fraction(amplitude: f64, shots: u32, trials: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    use rand_distr::{Binomial, Distribution};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| -1.0 + 2.0 * i as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let mut sq = 0.0;
    let mut used = 0usize;
    for _ in 0..trials {
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| {
                let p = amplitude * (-x * x / 2.0).exp();
                let k = Binomial::new(u64::from(shots), p).expect("valid probability").sample(&mut rng);
                k as f64 / f64::from(shots)
            })
            .collect();
        if let Some(f) = fit_gaussian(&xs, &ys, &binomial_weights(&ys, shots)) {
            sq += f.centre * f.centre;
            used += 1;
        }
    }
    (sq / used.max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::{HiddenTruth, NoiseConfig};
    use crate::physics::KHZ;

    #[test]
    fn fit_recovers_exact_gaussian() {
        let xs = [-1.0, -0.2, 0.5, 1.3];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 0.8 * (-(x - 0.3f64).powi(2) / (2.0 * 0.9 * 0.9)).exp()).collect();
        let f = fit_gaussian(&xs, &ys, &[1.0; 4]).unwrap();
        assert!((f.centre - 0.3).abs() < 1e-6 && (f.sigma - 0.9).abs() < 1e-6 && (f.amplitude - 0.8).abs() < 1e-6);
    }

    #[test]
    fn fit_rejects_a_valley() {
        let xs = [-1.0, -0.33, 0.33, 1.0];
        let ys = [0.9, 0.2, 0.2, 0.9];
        assert!(fit_gaussian(&xs, &ys, &[1.0; 4]).is_none());
    }

    #[test]
    fn centre_error_is_a_tenth_of_the_width() {
        let e = centre_error_fraction(0.9, SHOTS_PER_POINT, 400, 3);
        assert!(e > 0.04 && e < 0.25, "{e}");
    }

    #[test]
    fn scan_widths_are_positive() {
        let m = ModelConfig::default().with_n_max(20);
        let w = ScanWidths::from_model(&m).unwrap();
        for v in [w.sideband_coarse, w.centerline, w.sideband, w.gate_time, w.phase] {
            assert!(v > 0.0 && v.is_finite());
        }
        assert!(w.centerline < 10.0 * KHZ);
    }

    #[test]
    fn clean_run_costs_1800_shots() {
        let m = ModelConfig::default().with_n_max(20);
        let w = ScanWidths::from_model(&m).unwrap();
        let mut lab = VirtualLab::new(m.clone(), HiddenTruth::default(), NoiseConfig::default(), 4).unwrap();
        let r = manual_baseline(&mut lab, ControlParams::nominal(&m), &w).unwrap();
        assert_eq!(r.total_shots, 1800);
        assert_eq!(lab.shots_taken(), 1800);
        assert!(r.scans.iter().all(|s| !s.widened));
    }
}
