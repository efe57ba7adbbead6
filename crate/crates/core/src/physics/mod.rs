//! Mølmer-Sørensen gate simulation on the joint spin ⊗ motion space.
//!
//! The model is the interaction-picture Hamiltonian of a bichromatic drive
//! on two ions sharing one motional mode,
//!
//! ```text
//! H(t) = -η Ω(t) (a† e^{iδt} + a e^{-iδt}) [S_y cos(φ + Λ(t)) + S_x sin(φ + Λ(t))]
//! ```
//!
//! with `Λ(t) = ω_cl t`. Four physical quantities are estimated by the
//! calibration loop and bundled as [`GateParams`]; the fixed model
//! description (Lamb-Dicke factor, gate time, pulse shaping, truncation)
//! lives in [`ModelConfig`].

mod analytic;
mod propagate;
mod pulse;
pub mod spin;

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use analytic::{analytic_evolution, AnalyticEvolution};
pub use propagate::{
    propagate_sequence, propagate_sequence_phased, SequenceRunner, DEFAULT_STEPS_PER_GATE,
};
pub use pulse::{blackman_half_max, pulse_envelope, PulseShape};
pub use spin::ideal_ms_unitary;

/// One kHz expressed as an angular frequency (rad/s).
pub const KHZ: f64 = TAU * 1e3;

/// Wrap an angle into `(-π, π]`.
pub fn wrap_phase(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// The four physical gate parameters `Θ = (Ω, ω_cl, δ, Δφ)`.
///
/// Frequencies are angular (rad/s); `phase_step` is the extra phase
/// accumulated between consecutive gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub rabi: f64,
    pub centerline: f64,
    pub sideband: f64,
    pub phase_step: f64,
}

impl GateParams {
    pub const DIM: usize = 4;
    pub const PHASE_INDEX: usize = 3;
    pub const NAMES: [&'static str; 4] = ["rabi", "centerline", "sideband", "phase_step"];

    pub fn new(rabi: f64, centerline: f64, sideband: f64, phase_step: f64) -> Self {
        Self {
            rabi,
            centerline,
            sideband,
            phase_step,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.rabi, self.centerline, self.sideband, self.phase_step]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Same parameters with the phase wrapped into `(-π, π]`.
    pub fn wrapped(mut self) -> Self {
        self.phase_step = wrap_phase(self.phase_step);
        self
    }
}

/// Fixed description of the simulated gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Lamb-Dicke parameter η.
    pub eta: f64,
    /// Gate time `t_g` (s), full width at half maximum of the pulse.
    pub gate_time: f64,
    /// Duration of each Blackman half-ramp (s). Zero means a square pulse.
    pub ramp_time: f64,
    /// Highest Fock level kept.
    pub n_max: usize,
    /// Number of phase-space loops `K`.
    pub loops: u32,
    /// Initial motional Fock state.
    pub initial_fock: usize,
    /// Ramp integration step (s); `None` means `gate_time / 2000`.
    pub integrator_step: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            gate_time: 100e-6,
            ramp_time: 4e-6,
            n_max: 30,
            loops: 1,
            initial_fock: 0,
            integrator_step: None,
        }
    }
}

impl ModelConfig {
    /// Square-pulse variant of this configuration.
    pub fn constant_pulse(&self) -> Self {
        Self {
            ramp_time: 0.0,
            ..self.clone()
        }
    }

    pub fn with_gate_time(&self, gate_time: f64) -> Self {
        Self {
            gate_time,
            ..self.clone()
        }
    }

    pub fn with_n_max(&self, n_max: usize) -> Self {
        Self {
            n_max,
            ..self.clone()
        }
    }

    pub fn step(&self) -> f64 {
        self.integrator_step
            .unwrap_or(self.gate_time / DEFAULT_STEPS_PER_GATE as f64)
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidParameter(m.to_string()));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta must lie in (0, 1)");
        }
        if !(self.gate_time > 0.0 && self.gate_time.is_finite()) {
            return bad("gate_time must be positive");
        }
        if !(self.ramp_time >= 0.0) {
            return bad("ramp_time must be non-negative");
        }
        if self.n_max < 2 {
            return bad("n_max must be at least 2");
        }
        if self.loops < 1 {
            return bad("loops must be at least 1");
        }
        if self.initial_fock > self.n_max {
            return bad("initial_fock above n_max");
        }
        if self.step() <= 0.0 {
            return bad("integrator_step must be positive");
        }
        if self.pulse().plateau() < 0.0 {
            return bad("ramp_time too long for gate_time");
        }
        Ok(())
    }

    pub fn pulse(&self) -> PulseShape {
        PulseShape::new(self.gate_time, self.ramp_time)
    }

    /// Loop-closing sideband detuning `2πK / t_g`.
    pub fn sideband_opt(&self) -> f64 {
        TAU * f64::from(self.loops) / self.gate_time
    }

    /// Rabi frequency giving `θ(t_g) = π/2` at the loop-closing detuning.
    ///
    /// For a square pulse this is `π√K / (η t_g)`. For a shaped pulse the
    /// entangling angle is quadratic in Ω, so the square-pulse value is
    /// rescaled by the ratio of the two `θ` integrals.
    pub fn rabi_opt(&self) -> f64 {
        let square = PI * f64::from(self.loops).sqrt() / (self.eta * self.gate_time);
        if self.ramp_time == 0.0 {
            return square;
        }
        let theta = analytic::shaped_theta(self, 1.0, self.sideband_opt());
        (std::f64::consts::FRAC_PI_2 / theta).sqrt()
    }

    /// `Θ_opt = (Ω_opt, 0, δ_opt, 0)`.
    pub fn optimal(&self) -> GateParams {
        GateParams::new(self.rabi_opt(), 0.0, self.sideband_opt(), 0.0)
    }

    pub fn dim(&self) -> usize {
        4 * (self.n_max + 1)
    }

    /// Gate time at which the shaped-pulse optimum equals `rabi`.
    ///
    /// For a square pulse this is `t_g · Ω_opt / Ω`; with ramps the optimum
    /// is not exactly inverse in `t_g`, so the square-pulse guess is refined
    /// by secant steps.
    pub fn gate_time_for_rabi(&self, rabi: f64) -> crate::Result<f64> {
        if !(rabi > 0.0 && rabi.is_finite()) {
            return Err(crate::Error::InvalidParameter(format!("rabi = {rabi}")));
        }
        let guess = self.gate_time * self.rabi_opt() / rabi;
        if self.ramp_time == 0.0 {
            return Ok(guess);
        }
        let f = |t: f64| self.with_gate_time(t).rabi_opt() - rabi;
        let (mut t0, mut t1) = (guess, guess * 1.001);
        let (mut f0, mut f1) = (f(t0), f(t1));
        for _ in 0..30 {
            if f1 == f0 || (t1 - t0).abs() <= 1e-15 * t1 {
                break;
            }
            let t2 = t1 - f1 * (t1 - t0) / (f1 - f0);
            (t0, f0) = (t1, f1);
            t1 = t2;
            f1 = f(t1);
        }
        if !(t1 > 0.0 && t1.is_finite()) || self.with_gate_time(t1).validate().is_err() {
            return Err(crate::Error::InvalidParameter(format!(
                "no admissible gate time for rabi = {rabi}"
            )));
        }
        Ok(t1)
    }

    /// Hash of the physical model fields (not the numerical ones), used to
    /// match grids to runs.
    pub fn digest(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.eta.to_le_bytes());
        h.update(self.gate_time.to_le_bytes());
        h.update(self.ramp_time.to_le_bytes());
        h.update(self.loops.to_le_bytes());
        h.update((self.initial_fock as u64).to_le_bytes());
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
    }
}

/// Target phase step between consecutive gates of a measurement sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTarget {
    Zero,
    PlusQuarter,
    MinusQuarter,
}

impl PhaseTarget {
    pub fn angle(self) -> f64 {
        match self {
            PhaseTarget::Zero => 0.0,
            PhaseTarget::PlusQuarter => PI / 4.0,
            PhaseTarget::MinusQuarter => -PI / 4.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PhaseTarget::Zero => "0",
            PhaseTarget::PlusQuarter => "+pi/4",
            PhaseTarget::MinusQuarter => "-pi/4",
        }
    }
}

/// Maximum sequence length accepted in a measurement setting.
pub const MAX_GATES: u32 = 8;

/// A measurement setting: `n_gates` concatenated gates whose laser phase
/// advances by the target step between gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub n_gates: u32,
    pub phase_target: PhaseTarget,
}

impl MeasurementSetting {
    pub fn new(n_gates: u32, phase_target: PhaseTarget) -> Self {
        Self {
            n_gates,
            phase_target,
        }
    }

    pub fn single() -> Self {
        Self::new(1, PhaseTarget::Zero)
    }

    pub fn is_single(&self) -> bool {
        self.n_gates == 1
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.n_gates == 0 || self.n_gates > MAX_GATES {
            return Err(crate::Error::InvalidParameter(format!(
                "n_gates = {} outside 1..={MAX_GATES}",
                self.n_gates
            )));
        }
        Ok(())
    }

    /// Short file-name friendly tag, e.g. `n5_zero`.
    pub fn tag(&self) -> String {
        let p = match self.phase_target {
            PhaseTarget::Zero => "zero",
            PhaseTarget::PlusQuarter => "plus",
            PhaseTarget::MinusQuarter => "minus",
        };
        format!("n{}_{}", self.n_gates, p)
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.n_gates, self.phase_target.label())
    }
}

/// Amplitudes over `(gg, ge, eg, ee) ⊗ (Fock 0..=n_max)`, spin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinMotionState {
    pub n_max: usize,
    pub amplitudes: Vec<num_complex::Complex64>,
}

impl SpinMotionState {
    pub fn zeros(n_max: usize) -> Self {
        Self {
            n_max,
            amplitudes: vec![num_complex::Complex64::new(0.0, 0.0); 4 * (n_max + 1)],
        }
    }

    /// Product state `|spin⟩ ⊗ |n⟩` for a spin basis index.
    pub fn basis(n_max: usize, spin: usize, fock: usize) -> Self {
        let mut s = Self::zeros(n_max);
        s.amplitudes[spin * (n_max + 1) + fock] = num_complex::Complex64::new(1.0, 0.0);
        s
    }

    /// `|g,g⟩ ⊗ |n⟩`.
    pub fn ground(n_max: usize, fock: usize) -> Self {
        Self::basis(n_max, spin::GG, fock)
    }

    pub fn index(&self, spin: usize, fock: usize) -> usize {
        spin * (self.n_max + 1) + fock
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Population in the top two Fock levels.
    pub fn top_fock_population(&self) -> f64 {
        let m = self.n_max + 1;
        (0..4)
            .flat_map(|s| [s * m + m - 1, s * m + m - 2])
            .map(|i| self.amplitudes[i].norm_sqr())
            .sum()
    }
}

/// Probabilities of the three detection classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub p_gg: f64,
    pub p_one: f64,
    pub p_ee: f64,
}

impl OutcomeDistribution {
    pub fn new(p_gg: f64, p_one: f64, p_ee: f64) -> Self {
        Self { p_gg, p_one, p_ee }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p_gg, self.p_one, self.p_ee]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn total(&self) -> f64 {
        self.p_gg + self.p_one + self.p_ee
    }

    /// Clamp to `[0, 1]` and renormalize.
    pub fn clamped(self) -> Self {
        let a = self.to_array().map(|p| p.clamp(0.0, 1.0));
        let s: f64 = a.iter().sum();
        if s <= 0.0 {
            return Self::new(0.25, 0.5, 0.25);
        }
        Self::from_array(a.map(|p| p / s))
    }

    /// `(1 - p) P + p u` with `u = (1/4, 1/2, 1/4)`.
    pub fn depolarized(self, p: f64) -> Self {
        let u = DEPOLARIZED;
        let a = self.to_array();
        Self::from_array([0, 1, 2].map(|k| (1.0 - p) * a[k] + p * u[k]))
    }
}

/// Detection-class distribution of the fully mixed two-qubit state.
pub const DEPOLARIZED: [f64; 3] = [0.25, 0.5, 0.25];

/// Sum populations over Fock levels per detection class.
pub fn outcome_probabilities(state: &SpinMotionState) -> OutcomeDistribution {
    let m = state.n_max + 1;
    let pop = |s: usize| -> f64 {
        state.amplitudes[s * m..(s + 1) * m]
            .iter()
            .map(|z| z.norm_sqr())
            .sum()
    };
    let raw = [pop(spin::GG), pop(spin::GE) + pop(spin::EG), pop(spin::EE)];
    let total: f64 = raw.iter().sum();
    OutcomeDistribution::from_array(raw.map(|p| p / total))
}

/// Simulate a measurement sequence from `|g,g,n⟩` and return its outcome
/// distribution.
pub fn sequence_outcome(
    params: &GateParams,
    setting: &MeasurementSetting,
    cfg: &ModelConfig,
) -> crate::Result<OutcomeDistribution> {
    let init = SpinMotionState::ground(cfg.n_max, cfg.initial_fock);
    let fin = propagate_sequence(params, setting, cfg, &init)?;
    Ok(outcome_probabilities(&fin))
}

/// Largest truncation the adaptive helpers will try.
pub const MAX_ADAPTIVE_N_MAX: usize = 320;

/// Outcome distributions after each gate count in `checkpoints` (ascending)
/// at inter-gate phase target `phase_target`.
///
/// Starts at `cfg.n_max` and doubles the truncation while the leakage guard
/// trips, so results far from the optimum, where residual displacements add
/// up over many gates, stay converged. Without a retry the values equal
/// those of [`sequence_outcome`] bit for bit.
pub fn outcomes_adaptive(
    params: &GateParams,
    cfg: &ModelConfig,
    phase_target: f64,
    checkpoints: &[u32],
) -> crate::Result<Vec<OutcomeDistribution>> {
    let mut model = cfg.clone();
    loop {
        let out: crate::Result<Vec<_>> = SequenceRunner::new(params, &model)?
            .outcomes_at(model.initial_fock, phase_target, checkpoints)
            .into_iter()
            .collect();
        match out {
            Err(crate::Error::TruncationTooSmall { .. }) if model.n_max * 2 <= MAX_ADAPTIVE_N_MAX => {
                model = model.with_n_max(model.n_max * 2);
            }
            other => return other,
        }
    }
}

/// [`sequence_outcome`] with the truncation raised as needed; see
/// [`outcomes_adaptive`].
pub fn sequence_outcome_adaptive(
    params: &GateParams,
    setting: &MeasurementSetting,
    cfg: &ModelConfig,
) -> crate::Result<OutcomeDistribution> {
    setting.validate()?;
    Ok(outcomes_adaptive(params, cfg, setting.phase_target.angle(), &[setting.n_gates])?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_phase(0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bell_state_outcomes() {
        let n = 4;
        let mut s = SpinMotionState::zeros(n);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let gg = s.index(spin::GG, 0);
        let ee = s.index(spin::EE, 0);
        s.amplitudes[gg] = Complex64::new(r, 0.0);
        s.amplitudes[ee] = Complex64::new(0.0, -r);
        let o = outcome_probabilities(&s);
        assert!((o.p_gg - 0.5).abs() < 1e-12);
        assert!(o.p_one.abs() < 1e-12);
        assert!((o.p_ee - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_excited_class_aggregates_ge_and_eg() {
        let n = 5;
        let mut s = SpinMotionState::zeros(n);
        // |e,g⟩ ⊗ (|1⟩ + i|3⟩)/√2
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let a = s.index(spin::EG, 1);
        let b = s.index(spin::EG, 3);
        s.amplitudes[a] = Complex64::new(r, 0.0);
        s.amplitudes[b] = Complex64::new(0.0, r);
        let o = outcome_probabilities(&s);
        assert!((o.p_one - 1.0).abs() < 1e-12);
        assert!(o.p_gg.abs() < 1e-15 && o.p_ee.abs() < 1e-15);
    }

    #[test]
    fn depolarizing_floor() {
        let o = OutcomeDistribution::new(0.5, 0.0, 0.5).depolarized(0.01);
        assert!((o.p_one - 0.005).abs() < 1e-15);
        assert!((o.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gate_time_inverts_rabi_opt() {
        let cfg = ModelConfig::default();
        let target = 1.1 * cfg.rabi_opt();
        let t = cfg.gate_time_for_rabi(target).unwrap();
        let got = cfg.with_gate_time(t).rabi_opt();
        assert!((got / target - 1.0).abs() < 1e-12, "{got} {target}");
        assert!((t / (cfg.gate_time / 1.1) - 1.0).abs() < 1e-2);
        let sq = cfg.constant_pulse();
        let t = sq.gate_time_for_rabi(1.1 * sq.rabi_opt()).unwrap();
        assert!((t - 100e-6 / 1.1).abs() < 1e-18);
    }

    #[test]
    fn digest_ignores_numerics() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.digest(), cfg.with_n_max(12).digest());
        assert_ne!(cfg.digest(), cfg.with_gate_time(90e-6).digest());
    }

    #[test]
    fn optimal_parameters_square_pulse() {
        let cfg = ModelConfig::default().constant_pulse();
        let opt = cfg.optimal();
        assert!((opt.rabi - PI / (cfg.eta * 100e-6)).abs() / opt.rabi < 1e-14);
        assert!((opt.sideband - 10.0 * KHZ).abs() < 1e-6);
    }
}
