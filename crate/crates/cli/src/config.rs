//! Settings shared by every subcommand, loadable from one JSON file.
//!
//! Command-line flags override the file; the file overrides the defaults.

use std::path::Path;

use pahy::preavg::KnRule;
use pahy::sim::{NoiseSpec, SvModelParams};
use pahy::variance::{SubsampleSettings, VarianceMethod};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Window constant, `k_n = θ√n`. Default 0.15.
    pub theta: f64,
    /// Integer rule for `k_n`. Default `ceil`.
    pub kn_rule: KnRule,
    /// Weight function name. Default `triangle`.
    pub kernel: String,
    /// Map the pooled time range onto `[0, 1]` when reading ticks. Default off.
    pub normalize_time: bool,
    /// Asymptotic variance estimator; none means no variance is reported.
    pub variance: Option<VarianceMethod>,
    /// Block estimator tuning. Defaults `ϖ = 1`, `η = 7/12`.
    pub subsample: SubsampleSettings,
    /// Spot-volatility bandwidth of the plug-in estimator; none means `n^{-1/3}`.
    pub bandwidth: Option<f64>,
    /// Simpson nodes of the plug-in estimator; none means 101.
    pub grid_points: Option<usize>,
    /// Confidence level of the entrywise intervals; none means no intervals.
    pub ci: Option<f64>,
    /// Sampling design number (1 subset, 2 shifted, 3 Poisson). Default 2.
    pub scenario: u8,
    /// Latent model of the simulator.
    pub model: SvModelParams,
    /// Noise added to simulated observations.
    pub noise: NoiseSpec,
    /// Monte Carlo or simulation replications. Default 500.
    pub reps: usize,
    /// Root seed. Required by every randomized command; there is no default entropy.
    pub seed: Option<u64>,
    /// Brownian repetitions behind a calibration table. Default 1000.
    pub calibration_reps: usize,
    /// Correlation of the calibration pair. Default 1.
    pub rho: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            kn_rule: KnRule::Ceil,
            kernel: "triangle".into(),
            normalize_time: false,
            variance: None,
            subsample: SubsampleSettings::default(),
            bandwidth: None,
            grid_points: None,
            ci: None,
            scenario: 2,
            model: SvModelParams::default(),
            noise: NoiseSpec::default(),
            reps: 500,
            seed: None,
            calibration_reps: 1000,
            rho: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_idempotent() {
        let c = RunConfig {
            variance: Some(VarianceMethod::Plugin),
            seed: Some(11),
            ci: Some(0.9),
            ..RunConfig::default()
        };
        let once = c.to_json();
        let parsed = RunConfig::from_json(&once).unwrap();
        assert_eq!(parsed, c);
        assert_eq!(parsed.to_json(), once);
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = RunConfig::from_json(r#"{"theta": 0.3, "kn_rule": "round"}"#).unwrap();
        assert_eq!(c.theta, 0.3);
        assert_eq!(c.kn_rule, KnRule::Round);
        assert_eq!(c.kernel, "triangle");
        assert!(c.seed.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"theta": 0.3, "thetta": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"subsample": {"varpi": 1, "beta": 2}}"#).is_err());
    }
}
