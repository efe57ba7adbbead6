//! Seeded Monte-Carlo studies over hidden truths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::endpoint::miscalibration;
use crate::calibrator::{CalibrationConfig, CalibrationRecord, Calibrator, LikelihoodSource, PriorWidths};
use crate::filter::GaussianPrior;
use crate::lab::{ControlParams, HiddenTruth, NoiseConfig, VirtualLab};
use crate::physics::{wrap_phase, GateParams, ModelConfig};
use crate::strategy::{SettingThresholds, StopThresholds};
use crate::{Error, Result};

/// Normalized distance `D` of `start` from the prior mean,
/// `D² = Σ (Θ − Θ̄)² / σ²`, with the phase difference wrapped.
pub fn starting_distance(start: &GateParams, prior: &GaussianPrior) -> f64 {
    let a = start.to_array();
    let m = prior.mean.to_array();
    (0..4)
        .map(|d| {
            let diff = if d == GateParams::PHASE_INDEX {
                wrap_phase(a[d] - m[d])
            } else {
                a[d] - m[d]
            };
            (diff / prior.sigma[d]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Deterministic seed for job `index` of a study seeded with `base`.
pub fn job_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.random()
}

/// Uniform direction on the unit sphere in `n ≤ 4` dimensions.
fn direction(rng: &mut impl Rng, n: usize) -> [f64; 4] {
    loop {
        let mut v = [0.0; 4];
        for x in v.iter_mut().take(n) {
            *x = rng.sample(StandardNormal);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.map(|x| x / norm);
        }
    }
}

/// Truth at offset `units · σ` from the optimum.
pub fn truth_at(units: &[f64; 4], widths: &PriorWidths, model: &ModelConfig) -> HiddenTruth {
    let opt = model.optimal();
    let sigma = widths.sigma(opt.rabi);
    let mut a = opt.to_array();
    for d in 0..4 {
        a[d] += units[d] * sigma[d];
    }
    HiddenTruth::from_params(&GateParams::from_array(a), model)
}

/// Truth at distance `distance` in a random direction of the Rabi and
/// detuning coordinates; the phase offset is zero.
pub fn truth_on_shell(distance: f64, widths: &PriorWidths, model: &ModelConfig, rng: &mut impl Rng) -> HiddenTruth {
    truth_at(&direction(rng, 3).map(|x| x * distance), widths, model)
}

/// Truth drawn uniformly from the ball of radius `radius` in all four
/// coordinates.
pub fn truth_in_ball(radius: f64, widths: &PriorWidths, model: &ModelConfig, rng: &mut impl Rng) -> HiddenTruth {
    let r = radius * rng.random::<f64>().powf(0.25);
    truth_at(&direction(rng, 4).map(|x| x * r), widths, model)
}

/// Everything a study needs to run calibrations.
pub struct StudySetup<'a, S: LikelihoodSource> {
    pub model: ModelConfig,
    pub config: CalibrationConfig,
    pub source: &'a S,
    pub thresholds: Option<SettingThresholds>,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl<S: LikelihoodSource> StudySetup<'_, S> {
    fn calibrator(&self, config: CalibrationConfig) -> Result<Calibrator<'_, S>> {
        Calibrator::new(self.model.clone(), config, self.source, self.thresholds.clone())
    }

    /// Confirmed calibrations against `runs` truths drawn uniformly from the
    /// ball of radius `radius` (prior sigmas). Returns the final attempt of
    /// each run in seed order.
    pub fn convergence_runs(&self, runs: usize, radius: f64) -> Result<Vec<CalibrationRecord>> {
        let cal = self.calibrator(self.config.clone())?;
        (0..runs)
            .into_par_iter()
            .map(|i| {
                let seed = job_seed(self.seed, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let truth = truth_in_ball(radius, &self.config.prior, &self.model, &mut rng);
                let mut lab = VirtualLab::new(self.model.clone(), truth, self.noise, rng.random())?;
                let mut attempts = cal.run_confirmed(&mut lab, rng.random())?;
                Ok(attempts.pop().expect("at least one attempt"))
            })
            .collect()
    }

    /// Fraction of runs captured from each starting distance and particle
    /// count. The calibrations start from nominal settings with the prior
    /// widths of the setup config.
    pub fn capture_range(&self, distances: &[f64], particles: &[usize], trials: usize) -> Result<CaptureReport> {
        if trials == 0 {
            return Err(Error::InvalidParameter("capture study needs trials".into()));
        }
        let mut cells = Vec::new();
        for (ci, (&distance, &n_p)) in distances
            .iter()
            .flat_map(|d| particles.iter().map(move |p| (d, p)))
            .enumerate()
        {
            let cal = self.calibrator(CalibrationConfig {
                particles: n_p,
                ..self.config.clone()
            })?;
            let hits: Vec<bool> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let seed = job_seed(self.seed, (ci * trials + t) as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let truth = truth_on_shell(distance, &self.config.prior, &self.model, &mut rng);
                    let mut lab = VirtualLab::new(self.model.clone(), truth, self.noise, rng.random())?;
                    let rec = cal.run(&mut lab, ControlParams::nominal(&self.model), rng.random())?;
                    Ok(captured(&rec, &self.model, 2.0))
                })
                .collect::<Result<_>>()?;
            let k = hits.iter().filter(|h| **h).count();
            let (lo, hi) = wilson_interval(k, trials, 1.96);
            cells.push(CaptureCell {
                distance,
                particles: n_p,
                trials,
                captured: k,
                fraction: k as f64 / trials as f64,
                ci_low: lo,
                ci_high: hi,
            });
        }
        Ok(CaptureReport { cells })
    }
}

/// A run is captured if it converged and the lab's final parameters lie
/// within `factor` stop thresholds of the optimum of the final gate time.
pub fn captured(record: &CalibrationRecord, model: &ModelConfig, factor: f64) -> bool {
    if !record.converged() {
        return false;
    }
    let gate_time = record.final_control.gate_time;
    let m = miscalibration(&record.final_params, gate_time, model);
    let rabi_opt = model.with_gate_time(gate_time).rabi_opt();
    let t = StopThresholds::standard(rabi_opt).to_array();
    let off = [m[0] * rabi_opt, m[1], m[2], m[3]];
    (0..4).all(|d| off[d].abs() < factor * t[d])
}

/// One cell of the capture study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureCell {
    pub distance: f64,
    pub particles: usize,
    pub trials: usize,
    pub captured: usize,
    pub fraction: f64,
    /// 95% Wilson score interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureReport {
    pub cells: Vec<CaptureCell>,
}

impl CaptureReport {
    pub fn cell(&self, distance: f64, particles: usize) -> Option<&CaptureCell> {
        self.cells
            .iter()
            .find(|c| c.distance == distance && c.particles == particles)
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::KHZ;

    #[test]
    fn distance_examples() {
        let m = ModelConfig::default();
        let prior = PriorWidths::capture().prior(&m).unwrap();
        assert_eq!(starting_distance(&prior.mean, &prior), 0.0);
        let mut a = prior.mean.to_array();
        for d in 0..3 {
            a[d] += prior.sigma[d];
        }
        let three = starting_distance(&GateParams::from_array(a), &prior);
        assert!((three - 3f64.sqrt()).abs() < 1e-12);
        let mut a = prior.mean.to_array();
        a[2] += 2.0 * prior.sigma[2];
        assert!((starting_distance(&GateParams::from_array(a), &prior) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shell_truths_sit_at_the_distance() {
        let m = ModelConfig::default();
        let w = PriorWidths::capture();
        let prior = w.prior(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t = truth_on_shell(1.5, &w, &m, &mut rng);
            assert_eq!(t.phase_offset, 0.0);
            let lab = VirtualLab::new(m.clone(), t, NoiseConfig::default(), 0).unwrap();
            let p = lab.realized(&ControlParams::nominal(&m));
            assert!((starting_distance(&p, &prior) - 1.5).abs() < 1e-9);
        }
        for _ in 0..20 {
            let t = truth_in_ball(1.0, &w, &m, &mut rng);
            let lab = VirtualLab::new(m.clone(), t, NoiseConfig::default(), 0).unwrap();
            assert!(starting_distance(&lab.realized(&ControlParams::nominal(&m)), &prior) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(30, 30, 1.96);
        assert!(lo > 0.88 && lo < 0.9 && hi == 1.0);
        let (lo, hi) = wilson_interval(15, 30, 1.96);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn job_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (0..100).map(|i| job_seed(9, i)).collect();
        assert_eq!(s.len(), 100);
        assert_eq!(job_seed(9, 3), job_seed(9, 3));
    }

    #[test]
    fn capture_requires_convergence_and_closeness() {
        use crate::calibrator::StopReason;
        use crate::strategy::StrategyKind;
        let m = ModelConfig::default();
        let c = ControlParams::nominal(&m);
        let mut rec = CalibrationRecord {
            seed: 0,
            strategy: StrategyKind::Thresholded,
            iterations: vec![],
            total_shots: 0,
            stop_reason: StopReason::ThresholdsMet,
            final_control: c,
            final_params: m.optimal(),
            confirmation: None,
            wall_clock: 0.0,
        };
        assert!(captured(&rec, &m, 2.0));
        rec.final_params.centerline = 0.29 * KHZ;
        assert!(captured(&rec, &m, 2.0));
        rec.final_params.centerline = 0.31 * KHZ;
        assert!(!captured(&rec, &m, 2.0));
        rec.final_params.centerline = 0.0;
        rec.stop_reason = StopReason::NotConverged;
        assert!(!captured(&rec, &m, 2.0));
    }
}
