//! Likelihood lookups for a whole setting menu.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{load_grid, Interpolator};
use crate::filter::Likelihood;
use crate::physics::{GateParams, MeasurementSetting, ModelConfig, OutcomeDistribution};
use crate::{Error, Result};

/// Interpolators for every setting of a menu, all built at one reference
/// model.
///
/// Parameters measured at another gate time are mapped onto the reference
/// grids by expressing the Rabi frequency relative to the optimum at that
/// gate time and rescaling both detunings by `t_g / t_ref`, which keeps
/// `δ t_g` and `ω_cl t_g` fixed.
#[derive(Debug, Clone)]
pub struct GridSet {
    model: ModelConfig,
    grids: BTreeMap<MeasurementSetting, Interpolator>,
}

impl GridSet {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            grids: BTreeMap::new(),
        }
    }

    /// File name used for a setting's grid inside a grid directory.
    pub fn file_name(setting: &MeasurementSetting) -> String {
        format!("{}.grid", setting.tag())
    }

    pub fn path_for(dir: &Path, setting: &MeasurementSetting) -> PathBuf {
        dir.join(Self::file_name(setting))
    }

    pub fn insert(&mut self, interp: Interpolator) -> Result<()> {
        if interp.spec().model.digest() != self.model.digest() {
            return Err(Error::Config(format!(
                "grid for {} was built for a different model",
                interp.spec().setting
            )));
        }
        self.grids.insert(interp.spec().setting, interp);
        Ok(())
    }

    /// Load the grid of every setting from `dir`.
    pub fn load_dir(dir: &Path, settings: &[MeasurementSetting], model: &ModelConfig) -> Result<Self> {
        let mut set = Self::new(model.clone());
        for s in settings {
            let path = Self::path_for(dir, s);
            if !path.exists() {
                return Err(Error::MissingGrid {
                    setting: *s,
                    path,
                });
            }
            let table = load_grid(&path)?;
            if table.spec.setting != *s {
                return Err(Error::CorruptGridFile(format!(
                    "{} holds setting {}",
                    path.display(),
                    table.spec.setting
                )));
            }
            set.insert(Interpolator::new(&table)?)?;
        }
        Ok(set)
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn settings(&self) -> impl Iterator<Item = &MeasurementSetting> {
        self.grids.keys()
    }

    pub fn get(&self, setting: &MeasurementSetting) -> Result<&Interpolator> {
        self.grids.get(setting).ok_or(Error::NoGridForSetting(*setting))
    }

    /// Likelihood of `setting` for particles expressed at `gate_time`.
    pub fn likelihood(&self, setting: &MeasurementSetting, gate_time: f64) -> Result<GridLikelihood<'_>> {
        let interp = self.get(setting)?;
        let rabi_opt = if gate_time == self.model.gate_time {
            interp.rabi_opt()
        } else {
            self.model.with_gate_time(gate_time).rabi_opt()
        };
        Ok(GridLikelihood {
            interp,
            rabi_opt,
            scale: gate_time / self.model.gate_time,
        })
    }
}

/// A [`GridSet`] grid viewed from a particular gate time.
#[derive(Debug, Clone, Copy)]
pub struct GridLikelihood<'a> {
    interp: &'a Interpolator,
    rabi_opt: f64,
    scale: f64,
}

impl GridLikelihood<'_> {
    pub fn coordinates(&self, theta: &GateParams) -> [f64; 4] {
        [
            theta.rabi / self.rabi_opt,
            theta.centerline * self.scale,
            theta.sideband * self.scale,
            theta.phase_step,
        ]
    }
}

impl Likelihood for GridLikelihood<'_> {
    fn outcome(&self, theta: &GateParams) -> Result<OutcomeDistribution> {
        self.interp.interpolate_coords(self.coordinates(theta))
    }
}
