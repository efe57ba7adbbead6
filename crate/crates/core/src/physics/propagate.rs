//! Time-ordered propagation of gate sequences.
//!
//! Integration runs in the frame rotating with `δ a†a` on the motion and
//! with `(φ + ω_cl t) S_z` on the spins. There the Hamiltonian reads
//!
//! ```text
//! H̃(t) = −η Ω(t) (a + a†) ⊗ S_y + δ a†a + ω_cl S_z
//! ```
//!
//! and only the envelope `Ω(t)` depends on time. A laser phase jump `Δ`
//! between gates becomes the kick `exp(−iΔ S_z)` on the spins. Both frame
//! transformations are diagonal in the product basis, so populations are the
//! same in every frame.
//!
//! The flat top of each pulse is propagated exactly. Ramps use fixed
//! midpoint steps, each a full exponential of the frozen Hamiltonian. The
//! exponential action is a Taylor series summed to machine precision over
//! sub-steps short enough that no term grows past order one.

use num_complex::Complex64;

use super::spin::{self, S_Z_DIAG};
use super::{GateParams, MeasurementSetting, ModelConfig, OutcomeDistribution, SpinMotionState};
use crate::{Error, Result};

/// Ramp steps per gate time used when `integrator_step` is unset.
pub const DEFAULT_STEPS_PER_GATE: usize = 2000;

const LEAKAGE_LIMIT: f64 = 1e-4;
const NORM_DRIFT_LIMIT: f64 = 1e-6;
/// Largest `‖H‖·τ` handed to one Taylor expansion.
const TAYLOR_RADIUS: f64 = 2.0;
const TAYLOR_TOL_SQR: f64 = 1e-34;
const TAYLOR_MAX_TERMS: usize = 80;

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Non-zero entries `(row, column, value)` of `S_y`.
fn sy_entries() -> Vec<(usize, usize, Complex64)> {
    let sy = spin::s_y();
    let mut out = Vec::new();
    for r in 0..4 {
        for c in 0..4 {
            if sy[(r, c)].norm() > 0.0 {
                out.push((r, c, sy[(r, c)]));
            }
        }
    }
    out
}

/// `H̃ = coupling · (a + a†) ⊗ S_y + δ a†a + ω_cl S_z` on a truncated space.
struct FrameHamiltonian {
    levels: usize,
    sqrt_n: Vec<f64>,
    sy: Vec<(usize, usize, Complex64)>,
    /// Diagonal `δ n + ω_cl m_s`, spin-major.
    diag: Vec<f64>,
    /// Bound on `‖δ a†a + ω_cl S_z‖`.
    diag_norm: f64,
    /// Bound on `‖(a + a†) ⊗ S_y‖`.
    x_norm: f64,
}

impl FrameHamiltonian {
    fn new(n_max: usize, sideband: f64, centerline: f64) -> Self {
        let levels = n_max + 1;
        let sqrt_n = (0..=levels).map(|n| (n as f64).sqrt()).collect();
        let mut diag = Vec::with_capacity(4 * levels);
        for m in S_Z_DIAG {
            for n in 0..levels {
                diag.push(sideband * n as f64 + centerline * m);
            }
        }
        let diag_norm = diag.iter().fold(0.0_f64, |a, d| a.max(d.abs()));
        Self {
            levels,
            sqrt_n,
            sy: sy_entries(),
            diag,
            diag_norm,
            x_norm: 2.0 * (n_max as f64).sqrt(),
        }
    }

    fn norm_bound(&self, coupling: f64) -> f64 {
        coupling.abs() * self.x_norm + self.diag_norm
    }

    /// `out = H̃ psi`; `xbuf` holds `(a + a†) psi` per spin block.
    fn apply(&self, coupling: f64, psi: &[Complex64], out: &mut [Complex64], xbuf: &mut [Complex64]) {
        let m = self.levels;
        for s in 0..4 {
            let blk = &psi[s * m..(s + 1) * m];
            let xb = &mut xbuf[s * m..(s + 1) * m];
            for n in 0..m {
                let mut acc = C0;
                if n > 0 {
                    acc += blk[n - 1] * self.sqrt_n[n];
                }
                if n + 1 < m {
                    acc += blk[n + 1] * self.sqrt_n[n + 1];
                }
                xb[n] = acc;
            }
        }
        for (o, (p, d)) in out.iter_mut().zip(psi.iter().zip(&self.diag)) {
            *o = p * d;
        }
        if coupling != 0.0 {
            for &(r, c, v) in &self.sy {
                let f = v * coupling;
                let (dst, src) = (r * m, c * m);
                for n in 0..m {
                    out[dst + n] += f * xbuf[src + n];
                }
            }
        }
    }
}

/// Work buffers for the Taylor expansion.
struct Scratch {
    term: Vec<Complex64>,
    next: Vec<Complex64>,
    xbuf: Vec<Complex64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Self {
            term: vec![C0; dim],
            next: vec![C0; dim],
            xbuf: vec![C0; dim],
        }
    }
}

/// Running bookkeeping of truncation health.
#[derive(Debug, Default, Clone, Copy)]
struct Health {
    max_leakage: f64,
}

fn top_fock(psi: &[Complex64], levels: usize) -> f64 {
    (0..4)
        .map(|s| {
            let b = s * levels;
            psi[b + levels - 1].norm_sqr() + psi[b + levels - 2].norm_sqr()
        })
        .sum()
}

/// `psi ← exp(−i H̃ τ) psi`, sub-stepping so each expansion stays short.
fn expm_apply(
    ham: &FrameHamiltonian,
    coupling: f64,
    tau: f64,
    psi: &mut [Complex64],
    scr: &mut Scratch,
    health: &mut Health,
) {
    if tau == 0.0 {
        return;
    }
    let bound = ham.norm_bound(coupling) * tau.abs();
    let pieces = (bound / TAYLOR_RADIUS).ceil().max(1.0) as usize;
    let h = tau / pieces as f64;
    let minus_i_h = Complex64::new(0.0, -h);
    for _ in 0..pieces {
        scr.term.copy_from_slice(psi);
        for k in 1..=TAYLOR_MAX_TERMS {
            ham.apply(coupling, &scr.term, &mut scr.next, &mut scr.xbuf);
            let f = minus_i_h / k as f64;
            let mut size = 0.0;
            for (t, nx) in scr.term.iter_mut().zip(&scr.next) {
                *t = nx * f;
                size += t.norm_sqr();
            }
            for (p, t) in psi.iter_mut().zip(&scr.term) {
                *p += t;
            }
            if size < TAYLOR_TOL_SQR {
                break;
            }
        }
        health.max_leakage = health.max_leakage.max(top_fock(psi, ham.levels));
    }
}

fn apply_kick(psi: &mut [Complex64], levels: usize, angle: f64) {
    if angle == 0.0 {
        return;
    }
    let k = spin::z_kick(angle);
    for (s, f) in k.iter().enumerate() {
        for z in &mut psi[s * levels..(s + 1) * levels] {
            *z *= f;
        }
    }
}

/// Reusable single-gate propagator for one parameter point.
///
/// The gate (ramp up, flat top, ramp down) is identical for every gate of a
/// sequence, so a runner can replay it for many sequences and phase steps.
pub struct SequenceRunner {
    ham: FrameHamiltonian,
    rabi: f64,
    eta: f64,
    phase_step: f64,
    /// Envelope at the midpoints of the rising ramp steps.
    ramp_env: Vec<f64>,
    ramp_dt: f64,
    plateau: f64,
    n_max: usize,
}

impl SequenceRunner {
    pub fn new(params: &GateParams, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if !params.is_finite() {
            return Err(Error::InvalidParameter("non-finite gate parameters".into()));
        }
        if params.rabi <= 0.0 {
            return Err(Error::InvalidParameter("rabi must be positive".into()));
        }
        let shape = cfg.pulse();
        let (ramp_env, ramp_dt) = if cfg.ramp_time > 0.0 {
            let steps = (cfg.ramp_time / cfg.step()).ceil().max(1.0) as usize;
            let dt = cfg.ramp_time / steps as f64;
            let env = (0..steps)
                .map(|k| shape.value((k as f64 + 0.5) * dt))
                .collect();
            (env, dt)
        } else {
            (Vec::new(), 0.0)
        };
        Ok(Self {
            ham: FrameHamiltonian::new(cfg.n_max, params.sideband, params.centerline),
            rabi: params.rabi,
            eta: cfg.eta,
            phase_step: params.phase_step,
            ramp_env,
            ramp_dt,
            plateau: shape.plateau(),
            n_max: cfg.n_max,
        })
    }

    fn coupling(&self, env: f64) -> f64 {
        -self.eta * self.rabi * env
    }

    fn apply_gate(&self, psi: &mut [Complex64], scr: &mut Scratch, health: &mut Health) {
        for &e in &self.ramp_env {
            expm_apply(&self.ham, self.coupling(e), self.ramp_dt, psi, scr, health);
        }
        expm_apply(&self.ham, self.coupling(1.0), self.plateau, psi, scr, health);
        for &e in self.ramp_env.iter().rev() {
            expm_apply(&self.ham, self.coupling(e), self.ramp_dt, psi, scr, health);
        }
    }

    fn check(&self, psi: &[Complex64], health: &Health) -> Result<()> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let drift = (norm - 1.0).abs();
        if drift > NORM_DRIFT_LIMIT {
            return Err(Error::IntegratorStepTooCoarse { drift });
        }
        if health.max_leakage > LEAKAGE_LIMIT {
            return Err(Error::TruncationTooSmall {
                leakage: health.max_leakage,
                n_max: self.n_max,
            });
        }
        Ok(())
    }

    /// Run `n_gates` gates from `initial` with laser phase `global_phase`
    /// on the first gate; return the final state in the rotating frame.
    pub fn run_state(
        &self,
        initial: &SpinMotionState,
        setting: &MeasurementSetting,
        global_phase: f64,
    ) -> Result<SpinMotionState> {
        setting.validate()?;
        if initial.n_max != self.n_max {
            return Err(Error::InvalidParameter(format!(
                "state truncation {} does not match model n_max {}",
                initial.n_max, self.n_max
            )));
        }
        let norm0 = initial.norm_sqr();
        if (norm0 - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "initial state not normalized (|ψ|² = {norm0})"
            )));
        }
        let levels = self.n_max + 1;
        let mut psi = initial.amplitudes.clone();
        let mut scr = Scratch::new(psi.len());
        let mut health = Health::default();
        apply_kick(&mut psi, levels, global_phase);
        let step = setting.phase_target.angle() + self.phase_step;
        for g in 0..setting.n_gates {
            if g > 0 {
                apply_kick(&mut psi, levels, step);
            }
            self.apply_gate(&mut psi, &mut scr, &mut health);
        }
        self.check(&psi, &health)?;
        Ok(SpinMotionState {
            n_max: self.n_max,
            amplitudes: psi,
        })
    }

    /// Outcome distributions after each gate count in `checkpoints` for a
    /// sequence starting in `|g,g,n⟩`, with the inter-gate phase step
    /// `phase_target + phase_step`. Checkpoints must be ascending.
    ///
    /// Produces bit-for-bit the values `propagate_sequence` gives for the
    /// corresponding settings. Once a checkpoint fails every later one fails
    /// too, as the longer sequences would.
    pub fn outcomes_at(
        &self,
        initial_fock: usize,
        phase_target: f64,
        checkpoints: &[u32],
    ) -> Vec<Result<OutcomeDistribution>> {
        let levels = self.n_max + 1;
        let init = SpinMotionState::ground(self.n_max, initial_fock);
        let mut psi = init.amplitudes;
        let mut scr = Scratch::new(psi.len());
        let mut health = Health::default();
        let step = phase_target + self.phase_step;
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut done = 0u32;
        for &target in checkpoints {
            while done < target {
                if done > 0 {
                    apply_kick(&mut psi, levels, step);
                }
                self.apply_gate(&mut psi, &mut scr, &mut health);
                done += 1;
            }
            out.push(self.check(&psi, &health).map(|_| {
                super::outcome_probabilities(&SpinMotionState {
                    n_max: self.n_max,
                    amplitudes: psi.clone(),
                })
            }));
        }
        out
    }
}

/// Propagate `initial` through the measurement sequence `setting`.
///
/// Gate `k` runs with laser phase `k·(Δφ_target + Δφ)`; the centre-line
/// phase `Λ(t) = ω_cl t` accumulates continuously over the whole sequence.
/// The returned state is expressed in the rotating frame described in the
/// module docs.
pub fn propagate_sequence(
    params: &GateParams,
    setting: &MeasurementSetting,
    cfg: &ModelConfig,
    initial: &SpinMotionState,
) -> Result<SpinMotionState> {
    propagate_sequence_phased(params, setting, cfg, initial, 0.0)
}

/// [`propagate_sequence`] with an extra laser phase common to every gate.
pub fn propagate_sequence_phased(
    params: &GateParams,
    setting: &MeasurementSetting,
    cfg: &ModelConfig,
    initial: &SpinMotionState,
    global_phase: f64,
) -> Result<SpinMotionState> {
    SequenceRunner::new(params, cfg)?.run_state(initial, setting, global_phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{analytic_evolution, outcome_probabilities, sequence_outcome, PhaseTarget};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn max_gap(a: OutcomeDistribution, b: OutcomeDistribution) -> f64 {
        let (a, b) = (a.to_array(), b.to_array());
        (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
    }

    /// Right-hand side `-i H(t) ψ` of the interaction-picture Hamiltonian in
    /// its original time-dependent form, evaluated directly.
    fn lab_rhs(
        p: &GateParams,
        cfg: &ModelConfig,
        phase: f64,
        env: f64,
        t: f64,
        psi: &[Complex64],
        out: &mut [Complex64],
    ) {
        let m = cfg.n_max + 1;
        let sx = spin::s_x();
        let sy = spin::s_y();
        let ang = phase + p.centerline * t;
        let sphi = sy * Complex64::new(ang.cos(), 0.0) + sx * Complex64::new(ang.sin(), 0.0);
        let up = Complex64::from_polar(1.0, p.sideband * t);
        let pref = -cfg.eta * p.rabi * env;
        for o in out.iter_mut() {
            *o = Complex64::new(0.0, 0.0);
        }
        for r in 0..4 {
            for c in 0..4 {
                let s = sphi[(r, c)];
                if s.norm() == 0.0 {
                    continue;
                }
                for n in 0..m {
                    // a† e^{iδt} + a e^{-iδt}
                    let mut v = Complex64::new(0.0, 0.0);
                    if n > 0 {
                        v += up * psi[c * m + n - 1] * (n as f64).sqrt();
                    }
                    if n + 1 < m {
                        v += up.conj() * psi[c * m + n + 1] * ((n + 1) as f64).sqrt();
                    }
                    out[r * m + n] += Complex64::new(0.0, -pref) * s * v;
                }
            }
        }
    }

    /// Classical RK4 over the whole sequence with continuous time.
    fn rk4_sequence(p: &GateParams, setting: &MeasurementSetting, cfg: &ModelConfig, steps_per_gate: usize) -> OutcomeDistribution {
        let shape = cfg.pulse();
        let total = shape.duration();
        let h = total / steps_per_gate as f64;
        let mut psi = SpinMotionState::ground(cfg.n_max, 0).amplitudes;
        let dim = psi.len();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![Complex64::new(0.0, 0.0); dim], vec![Complex64::new(0.0, 0.0); dim], vec![Complex64::new(0.0, 0.0); dim], vec![Complex64::new(0.0, 0.0); dim], vec![Complex64::new(0.0, 0.0); dim]);
        let step = setting.phase_target.angle() + p.phase_step;
        for g in 0..setting.n_gates {
            let phase = g as f64 * step;
            let t0 = g as f64 * total;
            for s in 0..steps_per_gate {
                let tl = s as f64 * h;
                let f = |x: f64| shape.value(x);
                lab_rhs(p, cfg, phase, f(tl), t0 + tl, &psi, &mut k1);
                for i in 0..dim { tmp[i] = psi[i] + k1[i] * (h / 2.0); }
                lab_rhs(p, cfg, phase, f(tl + h / 2.0), t0 + tl + h / 2.0, &tmp, &mut k2);
                for i in 0..dim { tmp[i] = psi[i] + k2[i] * (h / 2.0); }
                lab_rhs(p, cfg, phase, f(tl + h / 2.0), t0 + tl + h / 2.0, &tmp, &mut k3);
                for i in 0..dim { tmp[i] = psi[i] + k3[i] * h; }
                lab_rhs(p, cfg, phase, f(tl + h), t0 + tl + h, &tmp, &mut k4);
                for i in 0..dim {
                    psi[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
                }
            }
        }
        outcome_probabilities(&SpinMotionState { n_max: cfg.n_max, amplitudes: psi })
    }

    fn random_point(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> GateParams {
        let opt = cfg.optimal();
        GateParams::new(
            opt.rabi * rng.random_range(0.5..1.5),
            0.0,
            opt.sideband * rng.random_range(0.5..1.5),
            rng.random_range(-PI..PI),
        )
    }

    #[test]
    fn matches_closed_form_single_gate() {
        let cfg = ModelConfig::default().constant_pulse();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = random_point(&mut rng, &cfg);
            let got = sequence_outcome(&p, &MeasurementSetting::single(), &cfg).unwrap();
            let u = analytic_evolution(&p, &cfg, cfg.gate_time).unwrap().unitary;
            let col: Vec<Complex64> = u.column(0).iter().copied().collect();
            let want = outcome_probabilities(&SpinMotionState { n_max: cfg.n_max, amplitudes: col });
            assert!(max_gap(got, want) < 1e-6, "{p:?}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn matches_closed_form_sequences() {
        // gate k of the sequence in the rotating frame: e^{-iδT a†a} U(T),
        // preceded by the phase kick
        let cfg = ModelConfig::default().constant_pulse().with_n_max(24);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let levels = cfg.n_max + 1;
        for n_gates in [2u32, 3, 4] {
            let p = random_point(&mut rng, &cfg);
            let p = GateParams { rabi: p.rabi.min(1.2 * cfg.rabi_opt()), sideband: p.sideband.max(0.8 * cfg.sideband_opt()), ..p };
            let setting = MeasurementSetting::new(n_gates, PhaseTarget::PlusQuarter);
            let u = analytic_evolution(&p, &cfg, cfg.gate_time).unwrap().unitary;
            let dim = 4 * levels;
            let frame = DMatrix::from_fn(dim, dim, |r, c| {
                if r == c {
                    Complex64::from_polar(1.0, -p.sideband * cfg.gate_time * (r % levels) as f64)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            let kick_d = spin::z_kick(PI / 4.0 + p.phase_step);
            let kick = DMatrix::from_fn(dim, dim, |r, c| {
                if r == c { kick_d[r / levels] } else { Complex64::new(0.0, 0.0) }
            });
            let gate = &frame * &u;
            let mut v = DMatrix::from_fn(dim, 1, |r, _| if r == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
            for g in 0..n_gates {
                if g > 0 {
                    v = &kick * v;
                }
                v = &gate * v;
            }
            let want = outcome_probabilities(&SpinMotionState { n_max: cfg.n_max, amplitudes: v.iter().copied().collect() });
            let got = sequence_outcome(&p, &setting, &cfg).unwrap();
            assert!(max_gap(got, want) < 1e-6, "{n_gates}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn matches_time_dependent_rk4_with_centerline() {
        let cfg = ModelConfig::default().with_n_max(14);
        let opt = cfg.optimal();
        let cases = [
            (GateParams::new(opt.rabi * 1.05, 2.0 * KHZ_TEST, opt.sideband * 0.97, 0.2), MeasurementSetting::new(3, PhaseTarget::PlusQuarter)),
            (GateParams::new(opt.rabi * 0.9, -1.3 * KHZ_TEST, opt.sideband * 1.1, -0.4), MeasurementSetting::new(2, PhaseTarget::Zero)),
        ];
        for (p, s) in cases {
            let got = sequence_outcome(&p, &s, &cfg).unwrap();
            let want = rk4_sequence(&p, &s, &cfg, 40_000);
            assert!(max_gap(got, want) < 1e-6, "{got:?} vs {want:?}");
        }
    }

    const KHZ_TEST: f64 = 2.0 * PI * 1e3;

    #[test]
    fn gate_conditions_square_pulse() {
        let cfg = ModelConfig::default().constant_pulse();
        let opt = cfg.optimal();
        let one = sequence_outcome(&opt, &MeasurementSetting::single(), &cfg).unwrap();
        assert!(max_gap(one, OutcomeDistribution::new(0.5, 0.0, 0.5)) < 1e-6, "{one:?}");
        let two = sequence_outcome(&opt, &MeasurementSetting::new(2, PhaseTarget::Zero), &cfg).unwrap();
        assert!(two.p_ee >= 1.0 - 1e-6, "{two:?}");
    }

    #[test]
    fn shaped_gate_is_maximally_entangling() {
        let cfg = ModelConfig::default();
        let opt = cfg.optimal();
        let one = sequence_outcome(&opt, &MeasurementSetting::single(), &cfg).unwrap();
        assert!(max_gap(one, OutcomeDistribution::new(0.5, 0.0, 0.5)) < 1e-4, "{one:?}");
    }

    #[test]
    fn single_gate_ignores_phase_step() {
        let cfg = ModelConfig::default();
        let mut p = cfg.optimal();
        p.rabi *= 1.1;
        p.centerline = 0.5e3;
        let a = sequence_outcome(&p, &MeasurementSetting::single(), &cfg).unwrap();
        p.phase_step = 0.3;
        let b = sequence_outcome(&p, &MeasurementSetting::single(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn global_phase_and_centerline_sign() {
        let cfg = ModelConfig::default().with_n_max(20);
        let mut p = cfg.optimal();
        p.rabi *= 0.93;
        p.sideband *= 1.08;
        p.centerline = 1.7 * KHZ_TEST;
        p.phase_step = 0.25;
        let s = MeasurementSetting::new(3, PhaseTarget::PlusQuarter);
        let init = SpinMotionState::ground(cfg.n_max, 0);
        let a = outcome_probabilities(&propagate_sequence(&p, &s, &cfg, &init).unwrap());
        let b = outcome_probabilities(&propagate_sequence_phased(&p, &s, &cfg, &init, 1.234).unwrap());
        assert!(max_gap(a, b) < 1e-9);

    }

    #[test]
    fn conjugation_symmetry() {
        // complex conjugation maps (δ, ω_cl, Δ) to (−δ, −ω_cl, −Δ)
        let cfg = ModelConfig::default().with_n_max(20);
        let mut p = cfg.optimal();
        p.rabi *= 1.07;
        p.sideband *= 0.95;
        p.centerline = 1.7 * KHZ_TEST;
        p.phase_step = 0.3;
        let a = sequence_outcome(&p, &MeasurementSetting::new(3, PhaseTarget::PlusQuarter), &cfg).unwrap();
        let q = GateParams::new(p.rabi, -p.centerline, -p.sideband, -p.phase_step);
        let b = sequence_outcome(&q, &MeasurementSetting::new(3, PhaseTarget::MinusQuarter), &cfg).unwrap();
        assert!(max_gap(a, b) < 1e-9, "{a:?} vs {b:?}");
    }

    #[test]
    fn centerline_sign_flip_swaps_spin_populations() {
        // a π rotation about S_y flips ω_cl and the kicks and exchanges g and e
        let cfg = ModelConfig::default().with_n_max(20);
        let mut p = cfg.optimal();
        p.rabi *= 0.93;
        p.centerline = 1.7 * KHZ_TEST;
        p.phase_step = 0.2;
        let s = MeasurementSetting::new(2, PhaseTarget::Zero);
        let gg = SpinMotionState::ground(cfg.n_max, 0);
        let ee = SpinMotionState::basis(cfg.n_max, spin::EE, 0);
        let a = outcome_probabilities(&propagate_sequence(&p, &s, &cfg, &gg).unwrap());
        let q = GateParams::new(p.rabi, -p.centerline, p.sideband, -p.phase_step);
        let b = outcome_probabilities(&propagate_sequence(&q, &s, &cfg, &ee).unwrap());
        let b = OutcomeDistribution::new(b.p_ee, b.p_one, b.p_gg);
        assert!(max_gap(a, b) < 1e-9, "{a:?} vs {b:?}");
    }

    #[test]
    fn loop_closure_leaves_spin_pure() {
        let cfg = ModelConfig::default().constant_pulse();
        let init = SpinMotionState::ground(cfg.n_max, 0);
        let fin = propagate_sequence(&cfg.optimal(), &MeasurementSetting::single(), &cfg, &init).unwrap();
        let m = cfg.n_max + 1;
        // reduced spin density matrix, traced over motion
        let mut rho = nalgebra::Matrix4::<Complex64>::zeros();
        for r in 0..4 {
            for c in 0..4 {
                rho[(r, c)] = (0..m).map(|n| fin.amplitudes[r * m + n] * fin.amplitudes[c * m + n].conj()).sum();
            }
        }
        let purity = (rho * rho).trace().re;
        assert!(purity >= 1.0 - 1e-6, "{purity}");
    }

    #[test]
    fn step_halving_converged() {
        let cfg = ModelConfig::default().with_n_max(20);
        let mut p = cfg.optimal();
        p.rabi *= 1.1;
        p.centerline = 1.0 * KHZ_TEST;
        p.sideband *= 0.9;
        p.phase_step = 0.1;
        let s = MeasurementSetting::new(5, PhaseTarget::Zero);
        let coarse = sequence_outcome(&p, &s, &cfg).unwrap();
        let fine_cfg = ModelConfig { integrator_step: Some(cfg.step() / 2.0), ..cfg.clone() };
        let fine = sequence_outcome(&p, &s, &fine_cfg).unwrap();
        assert!(max_gap(coarse, fine) < 1e-6, "{coarse:?} vs {fine:?}");
    }

    #[test]
    fn detects_truncation_leakage() {
        let cfg = ModelConfig::default().constant_pulse().with_n_max(4);
        let mut p = cfg.optimal();
        p.sideband *= 0.5;
        assert!(matches!(
            sequence_outcome(&p, &MeasurementSetting::single(), &cfg),
            Err(Error::TruncationTooSmall { .. })
        ));
    }

    #[test]
    fn runner_checkpoints_are_bit_exact() {
        let cfg = ModelConfig::default().with_n_max(16);
        let mut p = cfg.optimal();
        p.centerline = 0.4 * KHZ_TEST;
        p.phase_step = -0.2;
        let runner = SequenceRunner::new(&p, &cfg).unwrap();
        let snaps = runner.outcomes_at(0, PhaseTarget::PlusQuarter.angle(), &[2, 4]);
        for (k, n) in [2u32, 4].iter().enumerate() {
            let direct = sequence_outcome(&p, &MeasurementSetting::new(*n, PhaseTarget::PlusQuarter), &cfg).unwrap();
            assert_eq!(*snaps[k].as_ref().unwrap(), direct);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = ModelConfig::default();
        let mut p = cfg.optimal();
        p.rabi = f64::NAN;
        assert!(sequence_outcome(&p, &MeasurementSetting::single(), &cfg).is_err());
        let init = SpinMotionState::zeros(cfg.n_max);
        assert!(propagate_sequence(&cfg.optimal(), &MeasurementSetting::single(), &cfg, &init).is_err());
    }
}
