//! Closed-form evolution for a constant drive without centre-line detuning.
//!
//! With `Ω` constant and `ω_cl = 0` the Hamiltonian is `f(t) S_φ` with a
//! bosonic `f`, so the Magnus series stops at second order:
//!
//! ```text
//! U(t) = D[γ(t) S_φ] exp[i θ(t) S_φ²]
//! γ(t) = η Ω (e^{iδt} − 1) / δ
//! θ(t) = (η Ω)² / δ · (t − sin(δt) / δ)
//! ```

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::spin;
use super::{GateParams, ModelConfig};
use crate::{Error, Result};

/// Result of [`analytic_evolution`].
#[derive(Debug, Clone)]
pub struct AnalyticEvolution {
    /// Phase-space displacement per unit of `S_φ`.
    pub gamma: Complex64,
    /// Accumulated geometric phase.
    pub theta: f64,
    /// Evolution operator on spin ⊗ motion, spin-major like
    /// [`SpinMotionState`](super::SpinMotionState).
    pub unitary: DMatrix<Complex64>,
}

/// Matrix elements `⟨m|D(α)|n⟩` on Fock levels `0..=n_max`.
///
/// Uses the associated-Laguerre closed form, which is exact for the
/// untruncated operator restricted to the kept levels.
pub(crate) fn displacement(alpha: Complex64, n_max: usize) -> DMatrix<Complex64> {
    let levels = n_max + 1;
    let x = alpha.norm_sqr();
    let pref = (-x / 2.0).exp();
    let mut d = DMatrix::from_element(levels, levels, Complex64::new(0.0, 0.0));
    for m in 0..levels {
        for n in 0..levels {
            let (hi, lo) = if m >= n { (m, n) } else { (n, m) };
            let k = hi - lo;
            // sqrt(lo!/hi!) computed as a running product
            let mut ratio = 1.0;
            for j in lo + 1..=hi {
                ratio /= (j as f64).sqrt();
            }
            let lag = laguerre(lo, k as f64, x);
            let z = if m >= n {
                alpha.powu(k as u32)
            } else {
                (-alpha.conj()).powu(k as u32)
            };
            d[(m, n)] = z * (pref * ratio * lag);
        }
    }
    d
}

/// Generalized Laguerre polynomial `L_n^{(a)}(x)` by upward recurrence.
fn laguerre(n: usize, a: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Evolution operator after time `t` of a constant drive with `ω_cl = 0`.
pub fn analytic_evolution(params: &GateParams, cfg: &ModelConfig, t: f64) -> Result<AnalyticEvolution> {
    if params.centerline != 0.0 || cfg.ramp_time != 0.0 {
        return Err(Error::AnalyticFormInvalid);
    }
    if !params.is_finite() || !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter("non-finite parameters or negative time".into()));
    }
    if params.sideband == 0.0 {
        return Err(Error::InvalidParameter("sideband detuning must be non-zero".into()));
    }
    let (eo, d) = (cfg.eta * params.rabi, params.sideband);
    let gamma = (Complex64::from_polar(1.0, d * t) - 1.0) * (eo / d);
    let theta = eo * eo / d * (t - (d * t).sin() / d);

    // Laser phase of the first gate is zero, so S_φ = S_y.
    let sy = spin::s_y();
    let eig = sy.symmetric_eigen();
    let levels = cfg.n_max + 1;
    let dim = 4 * levels;
    let mut u = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let disp = displacement(gamma * lambda, cfg.n_max);
        let phase = Complex64::from_polar(1.0, theta * lambda * lambda);
        for r in 0..4 {
            for c in 0..4 {
                let p = v[r] * v[c].conj() * phase;
                if p.norm() == 0.0 {
                    continue;
                }
                for m in 0..levels {
                    for n in 0..levels {
                        u[(r * levels + m, c * levels + n)] += p * disp[(m, n)];
                    }
                }
            }
        }
    }
    Ok(AnalyticEvolution {
        gamma,
        theta,
        unitary: u,
    })
}

/// Geometric phase `θ(T)` at the end of the shaped pulse for Rabi frequency
/// `rabi`, by quadrature of
/// `θ = (ηΩ)² ∫∫_{t₂<t₁} f(t₁) f(t₂) sin δ(t₁ − t₂)`.
pub(crate) fn shaped_theta(cfg: &ModelConfig, rabi: f64, sideband: f64) -> f64 {
    let shape = cfg.pulse();
    let total = shape.duration();
    let steps = 20_000;
    let h = total / steps as f64;
    // running G(t) = ∫_0^t f e^{iδs} ds, midpoint rule; the inner integral
    // over the current cell is taken as half a cell
    let mut g = Complex64::new(0.0, 0.0);
    let mut acc = 0.0;
    for k in 0..steps {
        let t = (k as f64 + 0.5) * h;
        let f = shape.value(t);
        let e = Complex64::from_polar(1.0, sideband * t);
        let half = e * (f * h * 0.5);
        acc += f * (e * (g + half).conj()).im * h;
        g += e * (f * h);
    }
    (cfg.eta * rabi).powi(2) * acc
}
