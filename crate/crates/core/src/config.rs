//! Experiment configuration, loaded from JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::IdfSpec;
use crate::graph::Normalization;
use crate::netsim::ChannelConfig;
use crate::policies::{Architecture, PolicyKind};
use crate::scheduler::Frequencies;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Every knob of one experiment. Each `(policy, seed)` pair is an
/// independent simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// One cell per seed and policy; the seed fixes the density, the initial
    /// placement and every random stream of the cell.
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyKind>,
    pub robots: usize,
    pub comm_radius: f64,
    /// Horizon in perception steps.
    pub steps: usize,
    pub frequencies: Frequencies,
    pub noise_sigma: f64,
    pub phase_jitter_s: f64,
    pub channel: ChannelConfig,
    pub world: IdfSpec,
    /// Pins the density to a saved grid for every seed instead of generating it.
    pub idf_file: Option<PathBuf>,
    pub normalization: Normalization,
    pub lloyd_gain: f64,
    pub v_max: f64,
    pub architecture: Architecture,
    /// Weights for the learned policy; seeded random weights when absent.
    pub model: Option<PathBuf>,
    pub weights_seed: u64,
    pub output_dir: PathBuf,
    /// Also write the fired-event timeline of every cell.
    pub event_log: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            policies: vec![
                PolicyKind::ClairvoyantLloyd,
                PolicyKind::CentralizedLloyd,
                PolicyKind::DecentralizedLloyd,
            ],
            robots: 32,
            comm_radius: 128.0,
            steps: 600,
            frequencies: Frequencies::default(),
            noise_sigma: 0.0,
            phase_jitter_s: 0.0,
            channel: ChannelConfig::default(),
            world: IdfSpec::default(),
            idf_file: None,
            normalization: Normalization::default(),
            lloyd_gain: 1.0,
            v_max: 5.0,
            architecture: Architecture::default(),
            model: None,
            weights_seed: 7,
            output_dir: PathBuf::from("results"),
            event_log: false,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be non-negative, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks ranges; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        if self.policies.is_empty() {
            return Err(ConfigError::Invalid("at least one policy is required".into()));
        }
        let mut seen = self.policies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.policies.len() {
            return Err(ConfigError::Invalid("policies are listed twice".into()));
        }
        if self.robots == 0 {
            return Err(ConfigError::Invalid("robot count must be positive".into()));
        }
        if self.steps == 0 {
            return Err(ConfigError::Invalid("horizon must be at least one step".into()));
        }
        positive("comm_radius", self.comm_radius)?;
        positive("lloyd_gain", self.lloyd_gain)?;
        positive("v_max", self.v_max)?;
        positive("world.side", self.world.side)?;
        positive("world.resolution", self.world.resolution)?;
        positive("world.peak_scale", self.world.peak_scale)?;
        if self.world.num_peaks == 0 && self.idf_file.is_none() {
            return Err(ConfigError::Invalid("world.num_peaks must be at least 1".into()));
        }
        non_negative("noise_sigma", self.noise_sigma)?;
        non_negative("phase_jitter_s", self.phase_jitter_s)?;
        non_negative("channel.latency_s", self.channel.latency_s)?;
        let p = self.channel.drop_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(ConfigError::Invalid(format!(
                "channel.drop_probability must be in [0, 1], got {p}"
            )));
        }
        let mut warnings = self
            .frequencies
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.architecture
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let step = self.lloyd_gain / self.frequencies.control;
        if step > 0.2 {
            warnings.push(format!(
                "lloyd_gain x control period = {step:.3} exceeds 0.2; Lloyd steps may overshoot"
            ));
        }
        Ok(warnings)
    }

    pub fn horizon_s(&self) -> f64 {
        self.steps as f64 / self.frequencies.perception
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.robots, 32);
        assert_eq!(cfg.comm_radius, 128.0);
        assert_eq!(cfg.steps, 600);
        assert_eq!(cfg.horizon_s(), 240.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"robotz": 3}"#),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"frequencies": {"perception": 1, "gnn": 2, "control": 4, "x": 1}}"#),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn nested_fields_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"seeds": [3, 4], "policies": ["gnn_policy"], "noise_sigma": 5,
                "frequencies": {"perception": 1.25, "gnn": 5, "control": 10},
                "channel": {"drop_probability": 0.1}, "normalization": "mean",
                "architecture": {"gnn_hidden": [16], "gnn_taps": 2}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.policies, vec![PolicyKind::GnnPolicy]);
        assert_eq!(cfg.frequencies.comm_hz(), 10.0);
        assert_eq!(cfg.normalization, Normalization::Mean);
        assert_eq!(cfg.architecture.gnn_dims(), vec![34, 16]);
        assert_eq!(cfg.horizon_s(), 480.0);
    }

    #[test]
    fn bad_ranges_are_invalid() {
        for bad in [
            r#"{"seeds": []}"#,
            r#"{"robots": 0}"#,
            r#"{"comm_radius": -1}"#,
            r#"{"noise_sigma": -0.5}"#,
            r#"{"channel": {"drop_probability": 1.5}}"#,
            r#"{"frequencies": {"perception": 0, "gnn": 1, "control": 1}}"#,
            r#"{"policies": ["gnn_policy", "gnn_policy"]}"#,
            r#"{"architecture": {"gnn_hidden": []}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(ConfigError::Invalid(_))), "{bad}");
        }
    }
}
