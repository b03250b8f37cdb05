//! Run configuration: one TOML file with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::SynthesisOptions;
use crate::model::PlatoonParams;
use crate::sim::PresetSettings;
use crate::tolerance::DEFAULT_POLICY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub p_min: usize,
    pub p_max: usize,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub gamma_iters: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            p_min: 1,
            p_max: 9,
            gamma_lo: 1.0,
            gamma_hi: 1000.0,
            gamma_iters: 20,
        }
    }
}

impl SweepSettings {
    /// Empty when `p_min > p_max`.
    pub fn p_range(&self) -> Vec<usize> {
        (self.p_min.max(1)..=self.p_max).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySettings {
    pub grid: usize,
    pub tolerance: f64,
}

impl Default for CertifySettings {
    fn default() -> Self {
        Self {
            grid: crate::certify::DEFAULT_GRID_POINTS,
            tolerance: DEFAULT_POLICY.certify,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Every random stream is derived from this.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub platoon: PlatoonParams,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub simulation: PresetSettings,
    #[serde(default)]
    pub certify: CertifySettings,
}

fn default_seed() -> u64 {
    1
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            platoon: PlatoonParams::reference(),
            synthesis: SynthesisOptions::default(),
            sweep: SweepSettings::default(),
            simulation: PresetSettings::default(),
            certify: CertifySettings::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.platoon.validate()?;
        self.synthesis.validate(self.platoon.h)?;
        let s = &self.sweep;
        if !(s.gamma_lo > 0.0 && s.gamma_lo < s.gamma_hi) {
            return Err(Error::Config(format!(
                "sweep.gamma_lo = {} must be positive and below gamma_hi = {}",
                s.gamma_lo, s.gamma_hi
            )));
        }
        let sim = &self.simulation;
        if sim.p == 0 || sim.attack_p_max == 0 || sim.substeps == 0 {
            return Err(Error::Config("simulation.p, attack_p_max and substeps must be positive".into()));
        }
        if let Some(p) = &sim.profile {
            p.check_bounds(self.platoon.v_min, self.platoon.v_max)?;
        }
        if !(sim.horizon > 0.0) {
            return Err(Error::Config("simulation.horizon must be positive".into()));
        }
        if self.certify.grid == 0 || !(self.certify.tolerance >= 0.0) {
            return Err(Error::Config("certify.grid must be positive and tolerance non-negative".into()));
        }
        Ok(())
    }
}
