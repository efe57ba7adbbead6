//! The closed calibration loop and the post-run confirmation check.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::filter::{
    Estimates, GaussianPrior, ParticleFilter, ShotCounts, DEFAULT_DEPOLARIZING, DEFAULT_PARTICLES, DEFAULT_SHRINKAGE,
};
use crate::grid::GridSet;
use crate::lab::{ControlParams, VirtualLab};
use crate::physics::{sequence_outcome_adaptive, wrap_phase, GateParams, MeasurementSetting, ModelConfig, PhaseTarget, KHZ};
use crate::strategy::{
    select_thresholded, select_variance_min, should_stop, SettingMenu, SettingThresholds, StopThresholds, StrategyKind,
};
use crate::{Error, Result};

/// Shots per iteration.
pub const SHOTS_PER_ITERATION: u32 = 100;
/// Shots in each confirmation sequence.
pub const CONFIRM_SHOTS: u32 = 100;
/// Ground-state counts a confirmation sequence needs to pass.
pub const CONFIRM_MIN_GG: u32 = 85;

/// Per-particle outcome probabilities for a setting at a gate time.
pub trait LikelihoodSource: Sync {
    fn predict(
        &self,
        filter: &ParticleFilter,
        setting: &MeasurementSetting,
        gate_time: f64,
        p_dep: f64,
    ) -> Result<Vec<[f64; 3]>>;
}

impl LikelihoodSource for GridSet {
    fn predict(
        &self,
        filter: &ParticleFilter,
        setting: &MeasurementSetting,
        gate_time: f64,
        p_dep: f64,
    ) -> Result<Vec<[f64; 3]>> {
        filter.predictions(&self.likelihood(setting, gate_time)?, p_dep)
    }
}

/// Exact propagation for every particle. Slow; meant for small filters.
#[derive(Debug, Clone)]
pub struct DirectSource {
    pub model: ModelConfig,
}

impl LikelihoodSource for DirectSource {
    fn predict(
        &self,
        filter: &ParticleFilter,
        setting: &MeasurementSetting,
        gate_time: f64,
        p_dep: f64,
    ) -> Result<Vec<[f64; 3]>> {
        let model = self.model.with_gate_time(gate_time);
        let f = |theta: &GateParams| sequence_outcome_adaptive(theta, setting, &model);
        filter.predictions(&f, p_dep)
    }
}

/// Prior widths `(σ_Ω/Ω_opt, σ_ωcl, σ_δ, σ_Δφ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorWidths {
    pub rabi_fraction: f64,
    pub centerline: f64,
    pub sideband: f64,
    pub phase: f64,
}

impl PriorWidths {
    /// Typical uncertainty after a rough preliminary calibration.
    pub fn standard() -> Self {
        Self {
            rabi_fraction: 0.2,
            centerline: 2.0 * KHZ,
            sideband: 2.0 * KHZ,
            phase: 0.16 * PI,
        }
    }

    /// Widths used for the capture-range study.
    pub fn capture() -> Self {
        Self {
            rabi_fraction: 0.2,
            centerline: KHZ,
            sideband: KHZ,
            phase: 0.33 * PI,
        }
    }

    pub fn sigma(&self, rabi_opt: f64) -> [f64; 4] {
        [self.rabi_fraction * rabi_opt, self.centerline, self.sideband, self.phase]
    }

    /// Gaussian prior around the optimum of `model`.
    pub fn prior(&self, model: &ModelConfig) -> Result<GaussianPrior> {
        let opt = model.optimal();
        GaussianPrior::new(opt, self.sigma(opt.rabi))
    }
}

/// Settings of the calibration loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub particles: usize,
    pub prior: PriorWidths,
    pub shrinkage: f64,
    /// Depolarizing probability assumed by the estimator.
    pub depolarizing: f64,
    pub max_iterations: usize,
    pub strategy: StrategyKind,
    pub menu: SettingMenu,
    /// Multiplies the standard stop thresholds.
    pub stop_scale: f64,
    pub confirm: bool,
    /// Full re-runs allowed after a rejected confirmation.
    pub max_reruns: u32,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            particles: DEFAULT_PARTICLES,
            prior: PriorWidths::standard(),
            shrinkage: DEFAULT_SHRINKAGE,
            depolarizing: DEFAULT_DEPOLARIZING,
            max_iterations: 60,
            strategy: StrategyKind::Thresholded,
            menu: SettingMenu::standard(),
            stop_scale: 1.0,
            confirm: true,
            max_reruns: 1,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Config("need at least 2 particles".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage < 1.0) {
            return Err(Error::Config(format!("shrinkage {} outside (0, 1)", self.shrinkage)));
        }
        if !(0.0..=0.5).contains(&self.depolarizing) {
            return Err(Error::Config(format!("depolarizing {} outside [0, 0.5]", self.depolarizing)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.stop_scale > 0.0) {
            return Err(Error::Config("stop_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ThresholdsMet,
    NotConverged,
}

/// One pass of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub setting: MeasurementSetting,
    pub counts: [u32; 3],
    /// Posterior mean and variance before feedback.
    pub mean: GateParams,
    pub variance: [f64; 4],
    pub effective_sample_size: f64,
    /// Control settings after feedback.
    pub control: ControlParams,
}

/// Counts of the two check sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationResult {
    pub counts_gg: Vec<(MeasurementSetting, u32)>,
    pub accept: bool,
}

/// Full history of one calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub seed: u64,
    pub strategy: StrategyKind,
    pub iterations: Vec<IterationRecord>,
    pub total_shots: u64,
    pub stop_reason: StopReason,
    pub final_control: ControlParams,
    /// Parameters the lab realized at the final control settings.
    pub final_params: GateParams,
    pub confirmation: Option<ConfirmationResult>,
    #[serde(skip)]
    pub wall_clock: f64,
}

impl CalibrationRecord {
    pub fn converged(&self) -> bool {
        self.stop_reason == StopReason::ThresholdsMet
    }

    pub fn accepted(&self) -> bool {
        self.converged() && self.confirmation.as_ref().is_none_or(|c| c.accept)
    }

    /// Shots spent inside the loop, confirmation excluded.
    pub fn loop_shots(&self) -> u64 {
        self.iterations.len() as u64 * u64::from(SHOTS_PER_ITERATION)
    }
}

/// Move the control settings to the estimated optimum and shift the
/// particles with them.
///
/// The gate time becomes the one whose optimal Rabi frequency is `Ω̄`; the
/// particles keep their Rabi frequency since the laser power is unchanged.
/// The other knobs, and the particles, move by `−ω̄_cl`, `δ_opt − δ̄` and
/// `−Δφ̄`, where `δ_opt` belongs to the new gate time.
pub fn apply_feedback(
    control: &ControlParams,
    est: &Estimates,
    filter: &mut ParticleFilter,
    model: &ModelConfig,
) -> Result<ControlParams> {
    let m = est.mean;
    if !m.is_finite() || !(m.rabi > 0.0) {
        return Err(Error::FeedbackRefused(format!("mean {m:?}")));
    }
    let current = model.with_gate_time(control.gate_time);
    let gate_time = current
        .gate_time_for_rabi(m.rabi)
        .map_err(|e| Error::FeedbackRefused(e.to_string()))?;
    let sideband_opt = current.with_gate_time(gate_time).sideband_opt();
    let shift_sb = sideband_opt - m.sideband;
    filter.map_particles(|p| {
        GateParams::new(
            p.rabi,
            p.centerline - m.centerline,
            p.sideband + shift_sb,
            p.phase_step - m.phase_step,
        )
    });
    Ok(ControlParams {
        gate_time,
        f_cl: control.f_cl - m.centerline,
        f_sb: control.f_sb + shift_sb,
        phi: wrap_phase(control.phi - m.phase_step),
    })
}

/// The two check sequences: eight gates at zero phase step and six at `π/4`.
pub fn confirmation_settings() -> [MeasurementSetting; 2] {
    [
        MeasurementSetting::new(8, PhaseTarget::Zero),
        MeasurementSetting::new(6, PhaseTarget::PlusQuarter),
    ]
}

/// Accept iff every check sequence returns to `|g,g⟩` in at least 85 of 100
/// shots.
pub fn confirm(lab: &mut VirtualLab, control: &ControlParams) -> Result<ConfirmationResult> {
    let mut counts_gg = Vec::new();
    for s in confirmation_settings() {
        let c = lab.run_shots(control, &s, CONFIRM_SHOTS)?;
        counts_gg.push((s, c.n_gg));
    }
    let accept = counts_gg.iter().all(|(_, n)| *n >= CONFIRM_MIN_GG);
    Ok(ConfirmationResult { counts_gg, accept })
}

/// Runs calibrations against a lab.
pub struct Calibrator<'a, S: LikelihoodSource> {
    pub model: ModelConfig,
    pub config: CalibrationConfig,
    pub source: &'a S,
    /// Required by the thresholded strategy.
    pub thresholds: Option<SettingThresholds>,
}

impl<'a, S: LikelihoodSource> Calibrator<'a, S> {
    pub fn new(
        model: ModelConfig,
        config: CalibrationConfig,
        source: &'a S,
        thresholds: Option<SettingThresholds>,
    ) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if config.strategy == StrategyKind::Thresholded && thresholds.is_none() {
            return Err(Error::Config("thresholded strategy needs setting thresholds".into()));
        }
        Ok(Self {
            model,
            config,
            source,
            thresholds,
        })
    }

    /// One calibration from `start` with a fresh prior, without confirmation.
    pub fn run(&self, lab: &mut VirtualLab, start: ControlParams, seed: u64) -> Result<CalibrationRecord> {
        let clock = Instant::now();
        let cfg = &self.config;
        let model_at = |c: &ControlParams| self.model.with_gate_time(c.gate_time);
        let mut control = start;
        let prior = cfg.prior.prior(&model_at(&control))?;
        let mut filter = ParticleFilter::new(&prior, cfg.particles, seed)?;
        let mut iterations = Vec::new();
        let mut stop_reason = StopReason::NotConverged;
        let mut shots = 0u64;
        for k in 0..cfg.max_iterations {
            let gate_time = control.gate_time;
            let stop = StopThresholds::standard(model_at(&control).rabi_opt()).scaled(cfg.stop_scale);
            let (setting, q) = match cfg.strategy {
                StrategyKind::VarianceMin => {
                    let sel = select_variance_min(&filter, &cfg.menu, &stop, |s| {
                        self.source.predict(&filter, s, gate_time, cfg.depolarizing)
                    })?;
                    (sel.setting, sel.predictions)
                }
                StrategyKind::Thresholded => {
                    let th = self.thresholds.as_ref().expect("checked in new");
                    let s = select_thresholded(&filter.estimates(), &cfg.menu, th, k);
                    let q = self.source.predict(&filter, &s, gate_time, cfg.depolarizing)?;
                    (s, q)
                }
            };
            let counts: ShotCounts = lab.run_shots(&control, &setting, SHOTS_PER_ITERATION)?;
            shots += u64::from(SHOTS_PER_ITERATION);
            filter.update_with_predictions(&counts, &q)?;
            let est = filter.estimates();
            let ess = filter.effective_sample_size();
            filter.resample_liu_west(cfg.shrinkage)?;
            control = apply_feedback(&control, &est, &mut filter, &self.model)?;
            iterations.push(IterationRecord {
                iteration: k,
                setting,
                counts: counts.to_array(),
                mean: est.mean,
                variance: est.variance,
                effective_sample_size: ess,
                control,
            });
            if should_stop(&est, &stop) {
                stop_reason = StopReason::ThresholdsMet;
                break;
            }
        }
        Ok(CalibrationRecord {
            seed,
            strategy: cfg.strategy,
            iterations,
            total_shots: shots,
            stop_reason,
            final_control: control,
            final_params: lab.realized(&control),
            confirmation: None,
            wall_clock: clock.elapsed().as_secs_f64(),
        })
    }

    /// Calibrate, confirm, and repeat from the last settings after a
    /// rejection while re-runs remain. Returns every attempt.
    pub fn run_confirmed(&self, lab: &mut VirtualLab, seed: u64) -> Result<Vec<CalibrationRecord>> {
        let mut start = ControlParams::nominal(&self.model);
        let mut out = Vec::new();
        for attempt in 0..=self.config.max_reruns {
            let mut rec = self.run(lab, start, seed.wrapping_add(u64::from(attempt)))?;
            if self.config.confirm && rec.converged() {
                let c = confirm(lab, &rec.final_control)?;
                rec.total_shots += u64::from(CONFIRM_SHOTS) * c.counts_gg.len() as u64;
                rec.confirmation = Some(c);
            }
            let done = rec.accepted() || !self.config.confirm;
            start = rec.final_control;
            out.push(rec);
            if done {
                break;
            }
        }
        Ok(out)
    }
}
