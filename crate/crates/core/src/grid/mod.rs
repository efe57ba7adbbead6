//! Precomputed outcome probabilities on a regular 4-D parameter grid.
//!
//! Axes are, in storage order, the Rabi frequency relative to the model's
//! optimum, the centre-line detuning, the sideband detuning and the phase
//! step. Each grid belongs to one measurement setting. Node values are
//! stored row-major with the phase axis fastest.

mod io;
mod source;
mod spline;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::physics::{
    outcomes_adaptive, GateParams, MeasurementSetting, ModelConfig, OutcomeDistribution, PhaseTarget, KHZ,
};
use crate::{Error, Result};

pub use io::{load_grid, save_grid, FORMAT_VERSION, MAGIC};
pub use source::GridSet;
pub use spline::Interpolator;

/// Equally spaced points `min, …, max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    /// Symmetric axis `centre ± half_width`.
    pub fn around(centre: f64, half_width: f64, count: usize) -> Self {
        Self::new(centre - half_width, centre + half_width, count)
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    fn validate(&self) -> Result<()> {
        if self.count < 4 {
            return Err(Error::InvalidParameter(format!(
                "axis needs at least 4 points, got {}",
                self.count
            )));
        }
        if !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "axis range [{}, {}] is empty",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Preset sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    /// 21 points per frequency axis, 25 in phase.
    Full,
    /// 9 points per frequency axis, 13 in phase, ranges halved.
    Test,
}

impl std::str::FromStr for GridScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GridScale::Full),
            "test" => Ok(GridScale::Test),
            other => Err(Error::Config(format!("unknown grid scale `{other}`"))),
        }
    }
}

/// Axes, setting and model of one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `(Ω/Ω_opt, ω_cl, δ, Δφ)`.
    pub axes: [GridAxis; 4],
    pub setting: MeasurementSetting,
    /// Model at which nodes are evaluated; `Ω_opt` and the reference gate
    /// time come from here.
    pub model: ModelConfig,
}

impl GridSpec {
    /// Preset axes around the optimum of `model`.
    ///
    /// The single-gate grid is wider in both detunings. The truncation is a
    /// starting point; nodes that need more get it during the build.
    pub fn preset(setting: MeasurementSetting, scale: GridScale, model: &ModelConfig) -> Self {
        let d_opt = model.sideband_opt();
        let (frac, cl, sb, n, n_phase) = match (scale, setting.is_single()) {
            (GridScale::Full, false) => (0.5, 3.5 * KHZ, 0.5 * d_opt, 21, 25),
            (GridScale::Full, true) => (0.5, 7.0 * KHZ, 1.0 * d_opt, 21, 25),
            (GridScale::Test, false) => (0.25, 1.75 * KHZ, 0.25 * d_opt, 9, 13),
            (GridScale::Test, true) => (0.25, 3.5 * KHZ, 0.5 * d_opt, 9, 13),
        };
        let half_phase = match scale {
            GridScale::Full => PI,
            GridScale::Test => PI / 2.0,
        };
        let n_max = match scale {
            GridScale::Full => model.n_max.max(40),
            GridScale::Test => model.n_max.max(30),
        };
        Self {
            axes: [
                GridAxis::around(1.0, frac, n),
                GridAxis::around(0.0, cl, n),
                GridAxis::around(d_opt, sb, n),
                GridAxis::around(0.0, half_phase, n_phase),
            ],
            setting,
            model: model.with_n_max(n_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.axes {
            a.validate()?;
        }
        self.setting.validate()?;
        self.model.validate()?;
        if self.axes[0].min <= 0.0 {
            return Err(Error::InvalidParameter("rabi axis must stay positive".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn shape(&self) -> [usize; 4] {
        self.axes.map(|a| a.count)
    }

    pub fn flat_index(&self, idx: [usize; 4]) -> usize {
        let s = self.shape();
        ((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]
    }

    pub fn unflatten(&self, mut flat: usize) -> [usize; 4] {
        let s = self.shape();
        let mut out = [0; 4];
        for d in (0..4).rev() {
            out[d] = flat % s[d];
            flat /= s[d];
        }
        out
    }

    /// Physical parameters at a node.
    pub fn node_params(&self, idx: [usize; 4]) -> GateParams {
        let rabi_opt = self.model.rabi_opt();
        self.params_at(idx, rabi_opt)
    }

    fn params_at(&self, idx: [usize; 4], rabi_opt: f64) -> GateParams {
        GateParams::new(
            self.axes[0].point(idx[0]) * rabi_opt,
            self.axes[1].point(idx[1]),
            self.axes[2].point(idx[2]),
            self.axes[3].point(idx[3]),
        )
    }

    /// Grid coordinates of physical parameters evaluated at the grid's model.
    pub fn coordinates(&self, theta: &GateParams, rabi_opt: f64) -> [f64; 4] {
        [theta.rabi / rabi_opt, theta.centerline, theta.sideband, theta.phase_step]
    }
}

/// Node values of one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub spec: GridSpec,
    pub values: Vec<OutcomeDistribution>,
}

impl GridTable {
    pub fn value(&self, idx: [usize; 4]) -> OutcomeDistribution {
        self.values[self.spec.flat_index(idx)]
    }

    /// Checksum over the serialized payload.
    pub fn checksum(&self) -> u64 {
        io::checksum(&io::encode_payload(self))
    }
}

/// Build one grid; see [`build_grids`].
pub fn build_grid(spec: &GridSpec) -> Result<GridTable> {
    Ok(build_grids(std::slice::from_ref(spec))?.remove(0))
}

/// Build several grids, sharing propagation between specs with the same
/// axes and model. Tables come back in the order of `specs`.
pub fn build_grids(specs: &[GridSpec]) -> Result<Vec<GridTable>> {
    if specs.is_empty() {
        return Err(Error::InvalidParameter("no grid specs given".into()));
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, s) in specs.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|g| specs[g[0]].axes == s.axes && specs[g[0]].model == s.model)
        {
            Some(g) => g.push(k),
            None => groups.push(vec![k]),
        }
    }
    let mut out: Vec<Option<GridTable>> = specs.iter().map(|_| None).collect();
    for g in groups {
        let members: Vec<GridSpec> = g.iter().map(|&k| specs[k].clone()).collect();
        for (k, t) in g.into_iter().zip(build_shared(&members)?) {
            out[k] = Some(t);
        }
    }
    Ok(out.into_iter().map(|t| t.expect("every spec built")).collect())
}

/// Build grids that share axes and model.
///
/// Settings with the same phase target are produced from one propagation
/// per node by reading the state after each requested gate count. Nodes
/// whose motion outgrows the truncation are recomputed with a larger one
/// (see [`outcomes_adaptive`]); all others are bit-for-bit those of
/// [`sequence_outcome`](crate::physics::sequence_outcome) at the node. Single-gate grids do not depend on the phase step and are
/// evaluated once per frequency triple.
fn build_shared(specs: &[GridSpec]) -> Result<Vec<GridTable>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::InvalidParameter("no grid specs given".into()))?;
    for s in specs {
        s.validate()?;
        if s.axes != first.axes || s.model != first.model {
            return Err(Error::InvalidParameter(
                "grids built together must share axes and model".into(),
            ));
        }
    }
    let model = &first.model;
    let rabi_opt = model.rabi_opt();
    let shape = first.shape();
    let triples = shape[0] * shape[1] * shape[2];
    let n_phase = shape[3];

    // group spec indices by phase target, each with sorted gate counts
    let mut groups: Vec<(PhaseTarget, Vec<u32>, Vec<usize>)> = Vec::new();
    for (k, s) in specs.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == s.setting.phase_target) {
            Some(g) => {
                g.1.push(s.setting.n_gates);
                g.2.push(k);
            }
            None => groups.push((s.setting.phase_target, vec![s.setting.n_gates], vec![k])),
        }
    }
    let plans: Vec<(f64, Vec<u32>, Vec<(usize, usize)>)> = groups
        .into_iter()
        .map(|(target, counts, owners)| {
            let mut checkpoints = counts.clone();
            checkpoints.sort_unstable();
            checkpoints.dedup();
            let map = owners
                .iter()
                .zip(&counts)
                .map(|(&o, c)| (o, checkpoints.iter().position(|x| x == c).expect("present")))
                .collect();
            (target.angle(), checkpoints, map)
        })
        .collect();

    type NodeResult = std::result::Result<OutcomeDistribution, String>;
    // per triple: per spec, n_phase results
    let per_triple: Vec<Vec<Vec<NodeResult>>> = (0..triples)
        .into_par_iter()
        .map(|t| {
            let i0 = t / (shape[1] * shape[2]);
            let i1 = (t / shape[2]) % shape[1];
            let i2 = t % shape[2];
            let mut out: Vec<Vec<NodeResult>> =
                specs.iter().map(|_| Vec::with_capacity(n_phase)).collect();
            for (angle, checkpoints, map) in &plans {
                let single_only = checkpoints == &[1];
                let mut cached: Option<Vec<NodeResult>> = None;
                for i3 in 0..n_phase {
                    let row = match &cached {
                        Some(row) => row.clone(),
                        None => {
                            let params = first.params_at([i0, i1, i2, i3], rabi_opt);
                            let row: Vec<NodeResult> = match outcomes_adaptive(&params, model, *angle, checkpoints) {
                                Ok(v) => v.into_iter().map(Ok).collect(),
                                Err(e) => vec![Err(e.to_string()); checkpoints.len()],
                            };
                            if single_only {
                                cached = Some(row.clone());
                            }
                            row
                        }
                    };
                    for &(owner, pos) in map {
                        out[owner].push(row[pos].clone());
                    }
                }
            }
            out
        })
        .collect();

    let mut tables = Vec::with_capacity(specs.len());
    for (k, spec) in specs.iter().enumerate() {
        let mut values = Vec::with_capacity(spec.node_count());
        let mut failures = 0usize;
        let mut first_fail: Option<(usize, String)> = None;
        for (t, per_spec) in per_triple.iter().enumerate() {
            for (i3, r) in per_spec[k].iter().enumerate() {
                match r {
                    Ok(v) => values.push(*v),
                    Err(e) => {
                        failures += 1;
                        if first_fail.is_none() {
                            first_fail = Some((t * n_phase + i3, e.clone()));
                        }
                        values.push(OutcomeDistribution::new(f64::NAN, f64::NAN, f64::NAN));
                    }
                }
            }
        }
        if let Some((first_index, first_error)) = first_fail {
            return Err(Error::GridBuildFailed {
                failures,
                first_index,
                first_error,
            });
        }
        tables.push(GridTable {
            spec: spec.clone(),
            values,
        });
    }
    Ok(tables)
}
