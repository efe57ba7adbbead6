//! Run configuration as a single TOML document.
//!
//! All quantities are SI: seconds, and angular frequencies in rad/s.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrator::CalibrationConfig;
use crate::grid::GridScale;
use crate::lab::{HiddenTruth, NoiseConfig};
use crate::physics::ModelConfig;
use crate::{Error, Result};

/// Parameters of the study commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Starting distances of the capture study, in prior sigmas.
    pub capture_distances: Vec<f64>,
    pub capture_particles: Vec<usize>,
    pub capture_trials: usize,
    /// Runs of the endpoint study and the radius (prior sigmas) of the
    /// ball their truths are drawn from.
    pub endpoint_runs: usize,
    pub endpoint_radius: f64,
    /// Points of an infidelity curve and their half-range per axis
    /// `(Ω/Ω_opt, ω_cl, δ, Δφ)`.
    pub curve_points: usize,
    pub curve_half_range: [f64; 4],
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            capture_distances: vec![1.0, 2.0],
            capture_particles: vec![500, 10_000],
            capture_trials: 30,
            endpoint_runs: 50,
            endpoint_radius: 1.0,
            curve_points: 41,
            curve_half_range: [0.05, 0.5 * crate::physics::KHZ, 0.5 * crate::physics::KHZ, 0.1 * std::f64::consts::PI],
        }
    }
}

/// Everything a command needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub calibration: CalibrationConfig,
    /// Hidden offsets of the simulated lab for `calibrate`.
    pub truth: HiddenTruth,
    pub noise: NoiseConfig,
    pub grid_scale: GridScale,
    pub grid_dir: PathBuf,
    pub out_dir: PathBuf,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelConfig::default(),
            calibration: CalibrationConfig::default(),
            truth: HiddenTruth::default(),
            noise: NoiseConfig::default(),
            grid_scale: GridScale::Test,
            grid_dir: PathBuf::from("grids"),
            out_dir: PathBuf::from("out"),
            study: StudyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.calibration.validate()?;
        self.truth.validate()?;
        self.noise.validate()?;
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical TOML form, seed included and
    /// directories left out.
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.grid_dir = PathBuf::new();
        c.out_dir = PathBuf::new();
        let text = c.to_toml()?;
        let h = Sha256::digest(text.as_bytes());
        Ok(h[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_document_uses_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[model]\ngate_time = 9e-5\n[calibration]\nstrategy = \"variance_min\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.gate_time, 9e-5);
        assert_eq!(cfg.model.eta, ModelConfig::default().eta);
        assert_eq!(cfg.calibration.strategy, crate::strategy::StrategyKind::VarianceMin);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.out_dir = "elsewhere".into();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.seed = 2;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
        assert_eq!(a.digest().unwrap().len(), 16);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_toml("[model]\neta = 2.0\n").is_err());
        assert!(RunConfig::from_toml("[noise]\ndepolarizing = 0.9\n").is_err());
        assert!(RunConfig::from_toml("[calibration]\nmenu = [{ n_gates = 3, phase_target = \"zero\" }]\n").is_err());
    }
}
