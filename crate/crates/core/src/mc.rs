//! Monte Carlo harness: relative bias and RMSE of the calibrated estimator,
//! and the finite-sample law of the standardised statistic.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HyError, Result};
use crate::hy::HyPanel;
use crate::inference::{standardize_entry, two_sided_z};
use crate::kernel::Kernel;
use crate::matrix::Matrix;
use crate::preavg::{window_size, KnRule};
use crate::sim::{simulate_rep, CalibrationKey, CalibrationTable, NoiseSpec, SamplingScheme, SvModelParams};
use crate::variance::{var_subsample_from, SubsampleSettings};

/// The three sampling designs of the study, scaled to the grid size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Asset 2 observed on a subset of asset 1's grid, half as often.
    #[serde(rename = "1")]
    Subset,
    /// Equal counts, asset 2 midway between asset 1's points.
    #[serde(rename = "2")]
    Shifted,
    /// Independent geometric waiting times with means 5 and 10 steps.
    #[serde(rename = "3")]
    Poisson,
}

impl Scenario {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::Subset),
            2 => Ok(Self::Shifted),
            3 => Ok(Self::Poisson),
            other => Err(HyError::Domain(format!("scenario must be 1, 2 or 3, got {other}"))),
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            Self::Subset => 1,
            Self::Shifted => 2,
            Self::Poisson => 3,
        }
    }

    /// `N/5` and `N/10` observations (4680 and 2340 for `N = 23400`).
    pub fn scheme(&self, n_grid: usize) -> SamplingScheme {
        match self {
            Self::Subset => SamplingScheme::Subset {
                n1: n_grid / 5,
                n2: n_grid / 10,
            },
            Self::Shifted => SamplingScheme::Shifted { n1: n_grid / 5 },
            Self::Poisson => SamplingScheme::Poisson {
                lambda1: 5.0,
                lambda2: 10.0,
            },
        }
    }
}

/// Everything that determines a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub scenario: Scenario,
    pub model: SvModelParams,
    pub noise: NoiseSpec,
    pub theta: f64,
    pub kn_rule: KnRule,
    pub kernel: String,
    pub subsample: SubsampleSettings,
    pub reps: usize,
    pub seed: u64,
    pub ci_level: f64,
}

impl McConfig {
    /// Desk-scale defaults for a scenario: `N = 23400`, 500 replications.
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self {
            scenario,
            model: SvModelParams::default(),
            noise: NoiseSpec::default(),
            theta: 0.15,
            kn_rule: KnRule::Ceil,
            kernel: "triangle".into(),
            subsample: SubsampleSettings::default(),
            reps: 500,
            seed,
            ci_level: 0.95,
        }
    }

    pub fn calibration_key(&self) -> CalibrationKey {
        CalibrationKey {
            scheme: self.scenario.scheme(self.model.n_grid),
            n_grid: self.model.n_grid,
            theta: self.theta,
            kernel: self.kernel.clone(),
            kn_rule: self.kn_rule,
        }
    }
}

/// Targets `Σ11, Σ12, Σ22` in this order.
pub const TARGETS: [(usize, usize); 3] = [(0, 0), (0, 1), (1, 1)];
pub const TARGET_NAMES: [&str; 3] = ["sigma11", "sigma12", "sigma22"];

/// Outcome of a single replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: u64,
    pub n_total: usize,
    pub k_n: usize,
    pub truth: [f64; 3],
    pub raw: [f64; 3],
    pub calibrated: [f64; 3],
    /// `V_{kl,kl}` after calibration.
    pub variance: [f64; 3],
    /// `None` where the variance estimate was not positive.
    pub standardized: [Option<f64>; 3],
}

/// Bias and RMSE of one target.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TargetSummary {
    /// Mean of estimate / truth; 1 for an unbiased estimator.
    pub relative_bias: f64,
    pub rmse: f64,
    pub raw_relative_bias: f64,
    pub raw_rmse: f64,
    /// Fraction of usable replications whose interval covers the truth.
    pub coverage: f64,
    pub usable_variance: usize,
    pub standardized_mean: f64,
    pub standardized_variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    pub fn new(samples: &[f64], lower: f64, upper: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let (mut below, mut above) = (0, 0);
        let w = (upper - lower) / bins as f64;
        for &x in samples {
            if x < lower {
                below += 1;
            } else if x >= upper {
                above += 1;
            } else {
                counts[(((x - lower) / w) as usize).min(bins - 1)] += 1;
            }
        }
        Self {
            lower,
            upper,
            counts,
            below,
            above,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    pub calibration: Option<CalibrationTable>,
    pub reps_completed: usize,
    pub failures: Vec<(u64, String)>,
    pub targets: Vec<(String, TargetSummary)>,
    /// Standardised `Σ12` statistic of every usable replication.
    pub standardized_sigma12: Vec<f64>,
    pub histogram_sigma12: Histogram,
    pub outcomes: Vec<RepOutcome>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl McReport {
    pub fn target(&self, name: &str) -> Option<&TargetSummary> {
        self.targets.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

fn run_rep(config: &McConfig, kernel: &Kernel, factors: &Matrix, rep: u64) -> Result<RepOutcome> {
    let scheme = config.scenario.scheme(config.model.n_grid);
    let sim = simulate_rep(&config.model, &config.noise, &scheme, config.seed, rep)?;
    let n = sim.panel.n_total();
    let k_n = window_size(n, config.theta, config.kn_rule);
    let hp = HyPanel::new(&sim.panel, kernel, k_n)?;
    let est = hp.estimate();
    let mut v = var_subsample_from(&hp, config.subsample)?;
    v.apply_calibration(factors)?;
    let mut out = RepOutcome {
        rep,
        n_total: n,
        k_n,
        truth: [0.0; 3],
        raw: [0.0; 3],
        calibrated: [0.0; 3],
        variance: [0.0; 3],
        standardized: [None; 3],
    };
    for (t, &(k, l)) in TARGETS.iter().enumerate() {
        out.truth[t] = sim.integrated[(k, l)];
        out.raw[t] = est.raw_matrix[(k, l)];
        out.calibrated[t] = est.raw_matrix[(k, l)] / factors[(k, l)];
        out.variance[t] = v.diagonal(k, l);
        out.standardized[t] = standardize_entry(out.calibrated[t], out.truth[t], out.variance[t], n).ok();
    }
    Ok(out)
}

/// Runs the experiment. Without a calibration table the raw estimator is
/// scored (factors of one). More than 1% failed replications abort the run.
pub fn run_mc(config: &McConfig, calibration: Option<&CalibrationTable>) -> Result<McReport> {
    if config.reps == 0 {
        return Err(HyError::Domain("at least one replication is required".into()));
    }
    if !(0.0..1.0).contains(&config.ci_level) {
        return Err(HyError::Domain(format!("confidence level must lie in [0, 1), got {}", config.ci_level)));
    }
    if let Some(c) = calibration {
        c.check_key(&config.calibration_key())?;
    }
    let kernel = Kernel::by_name(&config.kernel)?;
    let factors = calibration.map_or_else(|| Matrix::from_element(2, 2, 1.0), |c| c.factors.clone());
    let start = Instant::now();
    let mut results: Vec<(u64, Result<RepOutcome>)> = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| (rep, run_rep(config, &kernel, &factors, rep)))
        .collect();
    results.sort_by_key(|r| r.0);

    let mut outcomes = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (rep, r) in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                warn!("replication {rep} failed: {e}");
                failures.push((rep, e.to_string()));
            }
        }
    }
    if failures.len() * 100 > config.reps {
        return Err(HyError::Numerical(format!(
            "{} of {} replications failed; first: {}",
            failures.len(),
            config.reps,
            failures[0].1
        )));
    }
    if outcomes.is_empty() {
        return Err(HyError::Numerical("no replication succeeded".into()));
    }

    let z = two_sided_z(config.ci_level);
    let m = outcomes.len() as f64;
    let targets = TARGET_NAMES
        .iter()
        .enumerate()
        .map(|(t, name)| {
            let rel = outcomes.iter().map(|o| o.calibrated[t] / o.truth[t]).sum::<f64>() / m;
            let mse = outcomes.iter().map(|o| (o.calibrated[t] - o.truth[t]).powi(2)).sum::<f64>() / m;
            let raw_rel = outcomes.iter().map(|o| o.raw[t] / o.truth[t]).sum::<f64>() / m;
            let raw_mse = outcomes.iter().map(|o| (o.raw[t] - o.truth[t]).powi(2)).sum::<f64>() / m;
            let zs: Vec<f64> = outcomes.iter().filter_map(|o| o.standardized[t]).collect();
            let (mean, var) = mean_var(&zs);
            let covered = zs.iter().filter(|x| x.abs() <= z).count();
            let summary = TargetSummary {
                relative_bias: rel,
                rmse: mse.sqrt(),
                raw_relative_bias: raw_rel,
                raw_rmse: raw_mse.sqrt(),
                coverage: if zs.is_empty() { f64::NAN } else { covered as f64 / zs.len() as f64 },
                usable_variance: zs.len(),
                standardized_mean: mean,
                standardized_variance: var,
            };
            (name.to_string(), summary)
        })
        .collect();
    let z12: Vec<f64> = outcomes.iter().filter_map(|o| o.standardized[1]).collect();
    let runtime_secs = start.elapsed().as_secs_f64();
    info!("{} replications in {runtime_secs:.1}s", outcomes.len());
    Ok(McReport {
        config: config.clone(),
        calibration: calibration.cloned(),
        reps_completed: outcomes.len(),
        failures,
        targets,
        histogram_sigma12: Histogram::new(&z12, -4.0, 4.0, 50),
        standardized_sigma12: z12,
        outcomes,
        runtime_secs,
    })
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    (mean, var)
}
