//! Choice of the next measurement setting and the stopping rule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::filter::{Estimates, ParticleFilter};
use crate::grid::{GridScale, GridSpec};
use crate::physics::{outcomes_adaptive, wrap_phase, GateParams, MeasurementSetting, ModelConfig, PhaseTarget, KHZ};
use crate::{Error, Result};

const P: usize = GateParams::PHASE_INDEX;

/// Target standard deviations `(T_Ω, T_ωcl, T_δ, T_Δφ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopThresholds {
    pub rabi: f64,
    pub centerline: f64,
    pub sideband: f64,
    pub phase: f64,
}

impl StopThresholds {
    /// `T_Ω = 0.02 Ω_opt`, 150 Hz, 200 Hz and `0.028π`.
    pub fn standard(rabi_opt: f64) -> Self {
        Self {
            rabi: 0.02 * rabi_opt,
            centerline: 0.15 * KHZ,
            sideband: 0.2 * KHZ,
            phase: 0.028 * PI,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.rabi, self.centerline, self.sideband, self.phase]
    }

    pub fn scaled(self, f: f64) -> Self {
        Self {
            rabi: self.rabi * f,
            centerline: self.centerline * f,
            sideband: self.sideband * f,
            phase: self.phase * f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|t| *t > 0.0 && t.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("stop thresholds must be positive: {self:?}")))
        }
    }
}

/// First-order sensitivity class of a setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityClass {
    Rabi,
    Phase,
}

impl SensitivityClass {
    pub fn of(setting: &MeasurementSetting) -> Self {
        match setting.phase_target {
            PhaseTarget::Zero => SensitivityClass::Rabi,
            _ => SensitivityClass::Phase,
        }
    }

    /// Class used at iteration `k` by the alternating strategy.
    pub fn for_iteration(k: usize) -> Self {
        if k % 2 == 0 {
            SensitivityClass::Rabi
        } else {
            SensitivityClass::Phase
        }
    }
}

/// Settings the calibration may choose from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MeasurementSetting>", into = "Vec<MeasurementSetting>")]
pub struct SettingMenu {
    settings: Vec<MeasurementSetting>,
}

impl SettingMenu {
    /// Sorted by gate count, then phase target; duplicates are dropped.
    pub fn new(mut settings: Vec<MeasurementSetting>) -> Result<Self> {
        for s in &settings {
            s.validate()?;
        }
        settings.sort();
        settings.dedup();
        if !settings.contains(&MeasurementSetting::single()) {
            return Err(Error::Config("setting menu must contain the single-gate setting".into()));
        }
        Ok(Self { settings })
    }

    /// `{1, 3, 5, 7}` gates at zero phase step and `{2, 4, 6}` at `π/4`.
    pub fn standard() -> Self {
        let mut v: Vec<_> = [1, 3, 5, 7]
            .map(|n| MeasurementSetting::new(n, PhaseTarget::Zero))
            .to_vec();
        v.extend([2, 4, 6].map(|n| MeasurementSetting::new(n, PhaseTarget::PlusQuarter)));
        Self::new(v).expect("standard menu is valid")
    }

    pub fn settings(&self) -> &[MeasurementSetting] {
        &self.settings
    }

    pub fn class(&self, c: SensitivityClass) -> impl Iterator<Item = &MeasurementSetting> {
        self.settings.iter().filter(move |s| SensitivityClass::of(s) == c)
    }
}

impl TryFrom<Vec<MeasurementSetting>> for SettingMenu {
    type Error = Error;
    fn try_from(v: Vec<MeasurementSetting>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SettingMenu> for Vec<MeasurementSetting> {
    fn from(m: SettingMenu) -> Self {
        m.settings
    }
}

/// Which selection rule drives the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    VarianceMin,
    Thresholded,
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance_min" | "variance-min" => Ok(StrategyKind::VarianceMin),
            "thresholded" => Ok(StrategyKind::Thresholded),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Per-outcome mean and variance for one reweighting of the particles.
fn reweighted_moments(filter: &ParticleFilter, weight: impl Fn(usize) -> f64) -> (f64, [f64; 4]) {
    let mut total = 0.0;
    let mut mean = [0.0; 4];
    let (mut s, mut c) = (0.0, 0.0);
    for (i, x) in filter.particles().enumerate() {
        let v = weight(i);
        let x = x.to_array();
        total += v;
        for d in 0..P {
            mean[d] += v * x[d];
        }
        s += v * x[P].sin();
        c += v * x[P].cos();
    }
    if total <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    for m in mean.iter_mut().take(P) {
        *m /= total;
    }
    mean[P] = s.atan2(c);
    let mut var = [0.0; 4];
    for (i, x) in filter.particles().enumerate() {
        let v = weight(i);
        let x = x.to_array();
        for d in 0..4 {
            let dev = if d == P { wrap_phase(x[d] - mean[d]) } else { x[d] - mean[d] };
            var[d] += v * dev * dev;
        }
    }
    (total, var.map(|v| v / total))
}

/// Outcome-averaged posterior variance after one more shot, given each
/// particle's outcome probabilities `q`.
///
/// For each class `j` the weights `w_i q_ij` are normalized to give the
/// hypothetical posterior variance, which is then averaged with the predicted
/// outcome probability `Σ_i w_i q_ij`.
pub fn expected_posterior_variance(filter: &ParticleFilter, q: &[[f64; 3]]) -> Result<[f64; 4]> {
    if q.len() != filter.len() {
        return Err(Error::InvalidParameter(format!(
            "{} predictions for {} particles",
            q.len(),
            filter.len()
        )));
    }
    let w = filter.weights();
    let mut out = [0.0; 4];
    for j in 0..3 {
        let (prob, var) = reweighted_moments(filter, |i| w[i] * q[i][j]);
        for d in 0..4 {
            out[d] += prob * var[d];
        }
    }
    Ok(out)
}

/// `X_s = Σ Var(Θ_s) / T_Θ²`.
pub fn score_setting(expected: &[f64; 4], stop: &StopThresholds) -> f64 {
    expected
        .iter()
        .zip(stop.to_array())
        .map(|(v, t)| v / (t * t))
        .sum()
}

/// Outcome of [`select_variance_min`].
#[derive(Debug, Clone)]
pub struct Selection {
    pub setting: MeasurementSetting,
    /// Predictions of the chosen setting, reusable for the update.
    pub predictions: Vec<[f64; 3]>,
    /// Score of every menu setting, in menu order.
    pub scores: Vec<(MeasurementSetting, f64)>,
}

/// Setting with the lowest score.
///
/// `predict` returns the per-particle outcome probabilities of a setting.
/// Ties go to fewer gates, then to the zero phase target.
pub fn select_variance_min(
    filter: &ParticleFilter,
    menu: &SettingMenu,
    stop: &StopThresholds,
    mut predict: impl FnMut(&MeasurementSetting) -> Result<Vec<[f64; 3]>>,
) -> Result<Selection> {
    let mut best: Option<(usize, f64, Vec<[f64; 3]>)> = None;
    let mut scores = Vec::with_capacity(menu.settings().len());
    // menu order is already (gate count, phase target), so the first minimum
    // wins ties
    for (k, s) in menu.settings().iter().enumerate() {
        let q = predict(s)?;
        let x = score_setting(&expected_posterior_variance(filter, &q)?, stop);
        scores.push((*s, x));
        let better = match &best {
            None => true,
            Some((_, b, _)) => x < *b && (*b - x) > 1e-12 * b.abs(),
        };
        if better {
            best = Some((k, x, q));
        }
    }
    let (k, _, predictions) = best.expect("menu is never empty");
    Ok(Selection {
        setting: menu.settings()[k],
        predictions,
        scores,
    })
}

/// Largest admissible prior standard deviation per setting and parameter.
/// Settings without an entry (the single gate) are always admissible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingThresholds {
    pub entries: Vec<(MeasurementSetting, [f64; 4])>,
}

impl SettingThresholds {
    pub fn get(&self, s: &MeasurementSetting) -> Option<[f64; 4]> {
        self.entries.iter().find(|(k, _)| k == s).map(|(_, t)| *t)
    }

    /// True when every standard deviation is within the setting's thresholds.
    pub fn admits(&self, s: &MeasurementSetting, std: &[f64; 4]) -> bool {
        match self.get(s) {
            None => true,
            Some(t) => std.iter().zip(t).all(|(sd, t)| *sd <= t),
        }
    }
}

/// Points per side of the optimum in a threshold scan.
const SCAN_POINTS: usize = 48;

/// Distance from the centre to the first local extremum of `p_gg` or
/// `p_ee` that is not at the centre itself, on one side of a 1-D scan.
fn first_extremum(values: &[[f64; 3]], step: f64) -> Option<f64> {
    // values[0] is the centre
    for k in 1..values.len() - 1 {
        for c in [0, 2] {
            let (a, b, n) = (values[k - 1][c], values[k][c], values[k + 1][c]);
            let is_ext = (b - a) * (n - b) < 0.0;
            if is_ext {
                // refine with a parabola through the three samples
                let denom = a - 2.0 * b + n;
                let off = if denom != 0.0 { 0.5 * (a - n) / denom } else { 0.0 };
                return Some((k as f64 + off.clamp(-0.5, 0.5)) * step);
            }
        }
    }
    None
}

/// Thresholds from 1-D model scans about the optimum.
///
/// Each parameter is scanned over the preset grid range of the setting at
/// `scale` with the others optimal. The threshold is the distance to the
/// nearest local extremum of `p_gg` or `p_ee` other than one sitting at the
/// optimum, or the range edge if there is none. Within a sensitivity class
/// thresholds are made non-increasing in the gate count.
pub fn derive_setting_thresholds(
    menu: &SettingMenu,
    model: &ModelConfig,
    scale: GridScale,
) -> Result<SettingThresholds> {
    let opt = model.optimal();
    let rabi_opt = opt.rabi;
    let mut entries: Vec<(MeasurementSetting, [f64; 4])> = Vec::new();
    for target in [PhaseTarget::Zero, PhaseTarget::PlusQuarter, PhaseTarget::MinusQuarter] {
        let settings: Vec<_> = menu
            .settings()
            .iter()
            .filter(|s| s.phase_target == target && !s.is_single())
            .copied()
            .collect();
        if settings.is_empty() {
            continue;
        }
        let checkpoints: Vec<u32> = settings.iter().map(|s| s.n_gates).collect();
        let mut table = vec![[0.0; 4]; settings.len()];
        for d in 0..4 {
            let spec = GridSpec::preset(settings[settings.len() - 1], scale, model);
            let axis = spec.axes[d];
            let centre = [1.0, 0.0, model.sideband_opt(), 0.0][d];
            let (lo, hi) = (centre - axis.min, axis.max - centre);
            let unit = if d == 0 { rabi_opt } else { 1.0 };
            let mut best = vec![f64::INFINITY; settings.len()];
            for (sign, reach) in [(1.0, hi), (-1.0, lo)] {
                let step = reach / SCAN_POINTS as f64;
                let rows: Vec<Vec<[f64; 3]>> = (0..=SCAN_POINTS)
                    .map(|k| {
                        let mut x = opt.to_array();
                        x[d] += sign * k as f64 * step * unit;
                        let v = outcomes_adaptive(&GateParams::from_array(x), &spec.model, target.angle(), &checkpoints)?;
                        Ok(v.into_iter().map(|o| o.to_array()).collect())
                    })
                    .collect::<Result<_>>()?;
                for (k, b) in best.iter_mut().enumerate() {
                    let series: Vec<[f64; 3]> = rows.iter().map(|r| r[k]).collect();
                    let dist = first_extremum(&series, step).unwrap_or(reach);
                    *b = b.min(dist * unit);
                }
            }
            for (k, b) in best.iter().enumerate() {
                table[k][d] = *b;
            }
        }
        // monotone in gate count within the class
        let mut order: Vec<usize> = (0..settings.len()).collect();
        order.sort_by_key(|&k| settings[k].n_gates);
        let mut run = [f64::INFINITY; 4];
        for &k in &order {
            for d in 0..4 {
                run[d] = run[d].min(table[k][d]);
                table[k][d] = run[d];
            }
            entries.push((settings[k], table[k]));
        }
    }
    entries.sort_by_key(|e| e.0);
    Ok(SettingThresholds { entries })
}

/// The alternating rule: within the class for this iteration, the admissible
/// setting with most gates, else the single gate.
pub fn select_thresholded(
    est: &Estimates,
    menu: &SettingMenu,
    thresholds: &SettingThresholds,
    iteration: usize,
) -> MeasurementSetting {
    let std = est.std();
    let class = SensitivityClass::for_iteration(iteration);
    menu.class(class)
        .filter(|s| thresholds.admits(s, &std))
        .max_by_key(|s| s.n_gates)
        .copied()
        .unwrap_or_else(MeasurementSetting::single)
}

/// True iff every posterior standard deviation is strictly below its
/// threshold.
pub fn should_stop(est: &Estimates, stop: &StopThresholds) -> bool {
    est.std().iter().zip(stop.to_array()).all(|(s, t)| *s < t)
}
