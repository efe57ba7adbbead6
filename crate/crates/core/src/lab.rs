//! Simulated experiment with hidden parameter offsets.
//!
//! The lab turns control settings into physical gate parameters through
//! offsets the calibrator never sees, propagates the sequence directly
//! (never through a grid) and samples detection counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::filter::{ShotCounts, DEFAULT_DEPOLARIZING};
use crate::physics::{sequence_outcome_adaptive, wrap_phase, GateParams, MeasurementSetting, ModelConfig, OutcomeDistribution};
use crate::{Error, Result};

/// Experimental knobs `(t_g, f_cl, f_sb, φ)`; frequencies are angular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub gate_time: f64,
    /// Centre-line frequency offset.
    pub f_cl: f64,
    /// Sideband detuning setpoint.
    pub f_sb: f64,
    /// Phase advance between consecutive gates.
    pub phi: f64,
}

impl ControlParams {
    /// Settings that are ideal when the lab has no offsets.
    pub fn nominal(model: &ModelConfig) -> Self {
        Self {
            gate_time: model.gate_time,
            f_cl: 0.0,
            f_sb: model.sideband_opt(),
            phi: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gate_time > 0.0) || ![self.gate_time, self.f_cl, self.f_sb, self.phi].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid control settings {self:?}")));
        }
        Ok(())
    }
}

/// What the experiment actually does, relative to nominal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HiddenTruth {
    /// True coupling over nominal.
    pub rabi_scale: f64,
    /// Centre-line shift (rad/s), e.g. an AC Stark shift.
    pub stark_offset: f64,
    /// Error of the assumed motional frequency (rad/s).
    pub mode_offset: f64,
    /// Extra phase between consecutive gates (rad).
    pub phase_offset: f64,
}

impl Default for HiddenTruth {
    fn default() -> Self {
        Self {
            rabi_scale: 1.0,
            stark_offset: 0.0,
            mode_offset: 0.0,
            phase_offset: 0.0,
        }
    }
}

impl HiddenTruth {
    /// Truth whose parameters at nominal control are `theta`.
    pub fn from_params(theta: &GateParams, model: &ModelConfig) -> Self {
        let opt = model.optimal();
        Self {
            rabi_scale: theta.rabi / opt.rabi,
            stark_offset: theta.centerline,
            mode_offset: theta.sideband - opt.sideband,
            phase_offset: theta.phase_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi_scale > 0.0) || !self.rabi_scale.is_finite() {
            return Err(Error::InvalidParameter(format!("rabi_scale = {}", self.rabi_scale)));
        }
        Ok(())
    }
}

/// Detection noise and slow drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Probability of replacing a shot's state by the fully mixed one.
    pub depolarizing: f64,
    /// Change of `(rabi_scale, stark_offset, mode_offset, phase_offset)`
    /// per shot.
    pub drift: [f64; 4],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            depolarizing: DEFAULT_DEPOLARIZING,
            drift: [0.0; 4],
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.depolarizing) {
            return Err(Error::InvalidParameter(format!(
                "depolarizing = {} outside [0, 0.5]",
                self.depolarizing
            )));
        }
        Ok(())
    }
}

/// Physical parameters realized by `control` in a lab with offsets `truth`.
///
/// The Rabi frequency is set by the laser power alone, so it stays at
/// `rabi_scale · Ω_opt` of the reference gate time whatever `t_g` is. The
/// offsets add to the knobs, which is what the feedback rules undo.
pub fn realized_params(control: &ControlParams, truth: &HiddenTruth, reference: &ModelConfig) -> GateParams {
    realize(control, truth, reference.rabi_opt())
}

fn realize(control: &ControlParams, truth: &HiddenTruth, reference_rabi: f64) -> GateParams {
    GateParams::new(
        truth.rabi_scale * reference_rabi,
        truth.stark_offset + control.f_cl,
        control.f_sb + truth.mode_offset,
        wrap_phase(truth.phase_offset + control.phi),
    )
}

/// A stateful simulated experiment.
#[derive(Debug, Clone)]
pub struct VirtualLab {
    /// Physics of the lab at the reference gate time.
    model: ModelConfig,
    reference_rabi: f64,
    truth: HiddenTruth,
    noise: NoiseConfig,
    rng: ChaCha8Rng,
    shots: u64,
}

impl VirtualLab {
    pub fn new(model: ModelConfig, truth: HiddenTruth, noise: NoiseConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        truth.validate()?;
        noise.validate()?;
        Ok(Self {
            reference_rabi: model.rabi_opt(),
            model,
            truth,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
            shots: 0,
        })
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn truth(&self) -> &HiddenTruth {
        &self.truth
    }

    pub fn shots_taken(&self) -> u64 {
        self.shots
    }

    /// Parameters the lab realizes for `control` right now.
    pub fn realized(&self, control: &ControlParams) -> GateParams {
        realize(control, &self.truth, self.reference_rabi)
    }

    /// Model of the lab with its gate time set by `control`.
    pub fn model_at(&self, control: &ControlParams) -> ModelConfig {
        self.model.with_gate_time(control.gate_time)
    }

    /// Exact single-shot distribution of `setting`, detection noise included.
    pub fn shot_distribution(&self, control: &ControlParams, setting: &MeasurementSetting) -> Result<OutcomeDistribution> {
        control.validate()?;
        let theta = self.realized(control);
        let p = sequence_outcome_adaptive(&theta, setting, &self.model_at(control))?;
        Ok(p.depolarized(self.noise.depolarizing))
    }

    /// Run `setting` `n` times and count the outcomes.
    pub fn run_shots(&mut self, control: &ControlParams, setting: &MeasurementSetting, n: u32) -> Result<ShotCounts> {
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one shot".into()));
        }
        let p = self.shot_distribution(control, setting)?;
        let mut counts = [0u32; 3];
        for _ in 0..n {
            let u: f64 = self.rng.random();
            let k = if u < p.p_gg {
                0
            } else if u < p.p_gg + p.p_one {
                1
            } else {
                2
            };
            counts[k] += 1;
        }
        self.shots += u64::from(n);
        let d = self.noise.drift;
        let f = f64::from(n);
        self.truth.rabi_scale += d[0] * f;
        self.truth.stark_offset += d[1] * f;
        self.truth.mode_offset += d[2] * f;
        self.truth.phase_offset += d[3] * f;
        Ok(ShotCounts::new(*setting, counts[0], counts[1], counts[2]))
    }
}
