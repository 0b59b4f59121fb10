use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{HyperBounds, BASE_JITTER};
use crate::optimizer::{Method, OptimizerConfig};
use crate::structural::{validate_sensor_floors, Damage};

/// Every knob of one simulate/expand experiment. Missing JSON fields take the
/// defaults of the 53-story example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_floors: usize,
    pub floor_mass: f64,
    pub story_stiffness: f64,
    pub damage: Option<Damage>,
    pub sensor_floors: Vec<usize>,
    /// Noise standard deviation as a fraction of each mode's Euclidean norm.
    pub noise_pct: f64,
    pub seed: u64,
    pub n_modes: usize,
    pub method: Method,
    pub lambda: f64,
    pub bounds: HyperBounds,
    pub initial_gamma: f64,
    pub initial_beta: f64,
    /// Noise standard deviation, in standardized units, of the virtual zero
    /// observation at the base.
    pub base_jitter: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_floors: 53,
            floor_mass: 1.0,
            story_stiffness: 1.0,
            damage: Some(Damage {
                floor: 15,
                retained: 0.2,
            }),
            sensor_floors: vec![10, 20, 30, 40, 53],
            noise_pct: 0.02,
            seed: 42,
            n_modes: 5,
            method: Method::ConsSogp,
            lambda: 1000.0,
            bounds: HyperBounds::default(),
            initial_gamma: 1.0,
            initial_beta: 0.1,
            base_jitter: BASE_JITTER,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_floors < 2 {
            return Err(Error::InvalidConfig(format!("n_floors must be at least 2, got {}", self.n_floors)));
        }
        if self.n_modes == 0 || self.n_modes > self.n_floors {
            return Err(Error::InvalidConfig(format!(
                "n_modes must be in 1..={}, got {}",
                self.n_floors, self.n_modes
            )));
        }
        if let Some(d) = self.damage {
            if d.floor == 0 || d.floor > self.n_floors {
                return Err(Error::InvalidConfig(format!(
                    "damage floor {} outside 1..={}",
                    d.floor, self.n_floors
                )));
            }
        }
        validate_sensor_floors(&self.sensor_floors, self.n_floors)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.sensor_floors.len() < 2 {
            return Err(Error::InvalidConfig("at least two sensor floors are required".into()));
        }
        if !(self.noise_pct >= 0.0 && self.noise_pct.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_pct must be non-negative, got {}", self.noise_pct)));
        }
        if !(self.base_jitter > 0.0 && self.base_jitter.is_finite()) {
            return Err(Error::InvalidConfig(format!("base_jitter must be positive, got {}", self.base_jitter)));
        }
        self.optimizer_config().validate()
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        self.optimizer_config_for(self.method)
    }

    pub fn optimizer_config_for(&self, method: Method) -> OptimizerConfig {
        OptimizerConfig {
            initial_gamma: self.initial_gamma,
            initial_beta: self.initial_beta,
            bounds: self.bounds,
            ..OptimizerConfig::for_method(method, self.lambda)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 7, "method": "sogp"}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.method, Method::Sogp);
        assert_eq!(c.n_floors, 53);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 7}"#).is_err());
    }

    #[test]
    fn cross_field_checks() {
        let bad = [
            RunConfig { sensor_floors: vec![10, 60], ..Default::default() },
            RunConfig { n_modes: 54, ..Default::default() },
            RunConfig { sensor_floors: vec![10], ..Default::default() },
            RunConfig { lambda: -1.0, ..Default::default() },
            RunConfig { initial_beta: 0.01, ..Default::default() },
            RunConfig { base_jitter: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
