//! Weighted-particle posterior over [`GateParams`].
//!
//! Coordinates are physical (`Ω`, `ω_cl`, `δ` in rad/s, `Δφ` in rad) with the
//! phase kept wrapped into `(-π, π]`. The phase coordinate is treated as
//! circular in every moment computation.

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::physics::{wrap_phase, GateParams, MeasurementSetting, OutcomeDistribution, DEPOLARIZED};
use crate::{Error, Result};

pub const DEFAULT_PARTICLES: usize = 10_000;
pub const DEFAULT_DEPOLARIZING: f64 = 0.01;
pub const DEFAULT_SHRINKAGE: f64 = 0.98;

const P: usize = GateParams::PHASE_INDEX;

/// Source of single-shot outcome probabilities for one measurement setting.
///
/// [`Error::OutsideGridSupport`] marks parameters the source cannot
/// describe; the filter gives such particles the fully depolarized
/// distribution.
pub trait Likelihood: Sync {
    fn outcome(&self, theta: &GateParams) -> Result<OutcomeDistribution>;
}

impl<F> Likelihood for F
where
    F: Fn(&GateParams) -> Result<OutcomeDistribution> + Sync,
{
    fn outcome(&self, theta: &GateParams) -> Result<OutcomeDistribution> {
        self(theta)
    }
}

/// Outcome probabilities actually used in the update: the depolarizing mix
/// of the model prediction, or the pure floor outside support.
pub fn mixed_outcome(l: &dyn Likelihood, theta: &GateParams, p_dep: f64) -> Result<[f64; 3]> {
    match l.outcome(theta) {
        Ok(o) => Ok(o.depolarized(p_dep).to_array()),
        Err(Error::OutsideGridSupport) => Ok(DEPOLARIZED),
        Err(e) => Err(e),
    }
}

/// Independent Gaussian prior per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: GateParams,
    /// `(σ_Ω, σ_ωcl, σ_δ, σ_Δφ)`.
    pub sigma: [f64; 4],
}

impl GaussianPrior {
    pub fn new(mean: GateParams, sigma: [f64; 4]) -> Result<Self> {
        if !sigma.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("prior sigmas must be positive: {sigma:?}")));
        }
        Ok(Self { mean, sigma })
    }
}

/// Single-shot counts of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotCounts {
    pub n_gg: u32,
    pub n_one: u32,
    pub n_ee: u32,
    pub setting: MeasurementSetting,
}

impl ShotCounts {
    pub fn new(setting: MeasurementSetting, n_gg: u32, n_one: u32, n_ee: u32) -> Self {
        Self {
            n_gg,
            n_one,
            n_ee,
            setting,
        }
    }

    pub fn total(&self) -> u32 {
        self.n_gg + self.n_one + self.n_ee
    }

    pub fn to_array(&self) -> [u32; 3] {
        [self.n_gg, self.n_one, self.n_ee]
    }
}

/// Weighted mean and per-coordinate variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub mean: GateParams,
    pub variance: [f64; 4],
}

impl Estimates {
    pub fn std(&self) -> [f64; 4] {
        self.variance.map(f64::sqrt)
    }
}

#[derive(Debug, Clone)]
pub struct ParticleFilter {
    particles: Vec<[f64; 4]>,
    weights: Vec<f64>,
    rng: ChaCha8Rng,
}

fn log_likelihood(q: [f64; 3], n: [u32; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        if n[k] > 0 {
            s += f64::from(n[k]) * q[k].ln();
        }
    }
    s
}

impl ParticleFilter {
    /// Draw `n_p` particles i.i.d. from `prior` with uniform weights.
    pub fn new(prior: &GaussianPrior, n_p: usize, seed: u64) -> Result<Self> {
        if n_p < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 particles, got {n_p}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = prior.mean.to_array();
        let particles = (0..n_p)
            .map(|_| {
                let mut x = [0.0; 4];
                for d in 0..4 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[d] = m[d] + prior.sigma[d] * z;
                }
                x[P] = wrap_phase(x[P]);
                x
            })
            .collect();
        Ok(Self {
            particles,
            weights: vec![1.0 / n_p as f64; n_p],
            rng,
        })
    }

    /// Filter from explicit particles and weights; weights are normalized.
    pub fn from_particles(particles: Vec<GateParams>, weights: Vec<f64>, seed: u64) -> Result<Self> {
        if particles.len() < 2 || particles.len() != weights.len() {
            return Err(Error::InvalidParameter("need ≥ 2 particles with one weight each".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be non-negative with positive sum".into()));
        }
        Ok(Self {
            particles: particles.iter().map(|p| p.wrapped().to_array()).collect(),
            weights: weights.iter().map(|w| w / total).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn particle(&self, i: usize) -> GateParams {
        GateParams::from_array(self.particles[i])
    }

    pub fn particles(&self) -> impl Iterator<Item = GateParams> + '_ {
        self.particles.iter().map(|p| GateParams::from_array(*p))
    }

    /// Kish effective sample size.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Mixed outcome probabilities of every particle under `likelihood`.
    pub fn predictions(&self, likelihood: &dyn Likelihood, p_dep: f64) -> Result<Vec<[f64; 3]>> {
        self.particles
            .par_iter()
            .map(|x| mixed_outcome(likelihood, &GateParams::from_array(*x), p_dep))
            .collect()
    }

    /// Bayes update with one batch of counts.
    pub fn update_weights(&mut self, counts: &ShotCounts, likelihood: &dyn Likelihood, p_dep: f64) -> Result<()> {
        let q = self.predictions(likelihood, p_dep)?;
        self.update_with_predictions(counts, &q)
    }

    /// Bayes update from precomputed per-particle probabilities.
    pub fn update_with_predictions(&mut self, counts: &ShotCounts, q: &[[f64; 3]]) -> Result<()> {
        let n = counts.to_array();
        let logw: Vec<f64> = self
            .weights
            .iter()
            .zip(q)
            .map(|(w, q)| w.ln() + log_likelihood(*q, n))
            .collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::PosteriorCollapsed { max_log_likelihood: max });
        }
        let mut total = 0.0;
        for (w, l) in self.weights.iter_mut().zip(&logw) {
            *w = (l - max).exp();
            total += *w;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::PosteriorCollapsed { max_log_likelihood: max });
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    /// Circular weighted mean of the phase coordinate.
    fn phase_mean(&self) -> f64 {
        let (mut s, mut c) = (0.0, 0.0);
        for (x, w) in self.particles.iter().zip(&self.weights) {
            s += w * x[P].sin();
            c += w * x[P].cos();
        }
        s.atan2(c)
    }

    /// Weighted mean and variance; the phase mean is circular and its
    /// variance uses deviations wrapped around that mean.
    pub fn estimates(&self) -> Estimates {
        let phase = self.phase_mean();
        let mut mean = [0.0; 4];
        for (x, w) in self.particles.iter().zip(&self.weights) {
            for d in 0..P {
                mean[d] += w * x[d];
            }
        }
        mean[P] = phase;
        let mut var = [0.0; 4];
        for (x, w) in self.particles.iter().zip(&self.weights) {
            let dev = self.deviation(x, &mean);
            for d in 0..4 {
                var[d] += w * dev[d] * dev[d];
            }
        }
        Estimates {
            mean: GateParams::from_array(mean),
            variance: var,
        }
    }

    fn deviation(&self, x: &[f64; 4], mean: &[f64; 4]) -> [f64; 4] {
        let mut d = [0.0; 4];
        for k in 0..4 {
            d[k] = x[k] - mean[k];
        }
        d[P] = wrap_phase(d[P]);
        d
    }

    /// Weighted covariance about the (circular) mean.
    pub fn covariance(&self) -> (Estimates, Matrix4<f64>) {
        let est = self.estimates();
        let mean = est.mean.to_array();
        let mut cov = Matrix4::zeros();
        for (x, w) in self.particles.iter().zip(&self.weights) {
            let v = Vector4::from(self.deviation(x, &mean));
            cov += v * v.transpose() * *w;
        }
        (est, cov)
    }

    /// Liu-West resampling with shrinkage `a`.
    ///
    /// Draws `N_p` particles with replacement by weight, moves each to
    /// `a x + (1 − a) mean` and adds Gaussian noise of covariance
    /// `(1 − a²) Cov`. Weights become uniform.
    pub fn resample_liu_west(&mut self, a: f64) -> Result<()> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidParameter(format!("shrinkage a = {a} outside (0, 1)")));
        }
        let (est, cov) = self.covariance();
        let mean = est.mean.to_array();
        let n = self.len();

        // inverse-CDF multinomial draw
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let total = acc;
        let picks: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = self.rng.random::<f64>() * total;
                cdf.partition_point(|c| *c <= u).min(n - 1)
            })
            .collect();

        // square root of the covariance, robust to singular directions
        let eig = cov.symmetric_eigen();
        let degenerate = eig.eigenvalues.iter().all(|l| *l <= 0.0);
        let root = eig.eigenvectors
            * Matrix4::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
            * (1.0 - a * a).sqrt();

        let mut next = Vec::with_capacity(n);
        for &i in &picks {
            let dev = self.deviation(&self.particles[i], &mean);
            let mut x = [0.0; 4];
            for d in 0..4 {
                x[d] = mean[d] + a * dev[d];
            }
            if !degenerate {
                let z = Vector4::from_fn(|_, _| StandardNormal.sample(&mut self.rng));
                let j = root * z;
                for d in 0..4 {
                    x[d] += j[d];
                }
            }
            x[P] = wrap_phase(x[P]);
            next.push(x);
        }
        self.particles = next;
        self.weights = vec![1.0 / n as f64; n];
        Ok(())
    }

    /// Apply `f` to every particle; the phase is re-wrapped afterwards.
    pub fn map_particles(&mut self, f: impl Fn(GateParams) -> GateParams) {
        for x in &mut self.particles {
            *x = f(GateParams::from_array(*x)).wrapped().to_array();
        }
    }
}
