use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use pahy::grids::{empirical_time_transform, GridDiagnostics};
use pahy::hy::{CovEstimate, HyPanel};
use pahy::inference::{confidence_region, ConfidenceRegion};
use pahy::io::{read_ticks, write_ticks};
use pahy::kernel::Kernel;
use pahy::mc::{run_mc, McConfig, Scenario};
use pahy::preavg::{window_size, KnRule};
use pahy::sim::{calibrate as build_calibration, simulate_rep, CalibrationKey, CalibrationTable};
use pahy::variance::{
    effective_theta, var_plugin, var_subsample_from, var_univariate, PluginSettings, VarianceMethod, VarianceTensor,
};
use pahy::{HyError, Matrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Pretty JSON to `out`, or to stdout.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(HyError::from)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(HyError::from)?,
        None => print_stdout(&text)?,
    }
    Ok(())
}

/// Like `println!`, but a closed pipe is an error instead of a panic.
pub fn print_stdout(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").and_then(|_| out.flush()).map_err(|e| CliError::Core(e.into()))
}

fn require_seed(cfg: &RunConfig) -> Result<u64, CliError> {
    cfg.seed
        .ok_or_else(|| CliError::Usage("a --seed is required; runs never draw their own entropy".into()))
}

fn scenario(cfg: &RunConfig) -> Result<Scenario, CliError> {
    Scenario::from_number(cfg.scenario).map_err(|e| CliError::Usage(e.to_string()))
}

fn load_calibration(path: &Path) -> Result<CalibrationTable, CliError> {
    let file = File::open(path).map_err(HyError::from)?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Usage(format!("bad calibration table {}: {e}", path.display())))
}

#[derive(Serialize)]
struct VarianceReport {
    method: VarianceMethod,
    /// `d² × d²` matrix over column-stacked entries.
    vec_matrix: Vec<Vec<f64>>,
    flagged: Vec<(usize, usize)>,
    diagnostics: Vec<String>,
}

impl From<&VarianceTensor> for VarianceReport {
    fn from(v: &VarianceTensor) -> Self {
        Self {
            method: v.method(),
            vec_matrix: rows(&v.vec_matrix()),
            flagged: v.flagged().to_vec(),
            diagnostics: v.diagnostics.clone(),
        }
    }
}

#[derive(Serialize)]
struct EstimateReport {
    assets: Vec<String>,
    intervals_per_asset: Vec<usize>,
    kernel: String,
    kn_rule: KnRule,
    theta: f64,
    theta_effective: f64,
    estimate: CovEstimate,
    calibration_key_hash: Option<String>,
    variance: Option<VarianceReport>,
    confidence: Option<ConfidenceRegion>,
    grid: GridDiagnostics,
    diagnostics: Vec<String>,
}

pub fn estimate(cfg: &RunConfig, input: &Path, calibration: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let file = File::open(input).map_err(HyError::from)?;
    let panel = read_ticks(BufReader::new(file), cfg.normalize_time)?;
    let kernel = Kernel::by_name(&cfg.kernel)?;
    let n = panel.n_total();
    let k_n = window_size(n, cfg.theta, cfg.kn_rule);
    let hp = HyPanel::new(&panel, &kernel, k_n)?;
    let mut est = hp.estimate();
    let tt = empirical_time_transform(&panel, 0.0)?;
    let mut diagnostics = Vec::new();

    let table = calibration.map(load_calibration).transpose()?;
    if let Some(t) = &table {
        let k = &t.key;
        if k.theta != cfg.theta || k.kernel != cfg.kernel || k.kn_rule != cfg.kn_rule {
            return Err(CliError::Core(HyError::Precondition(format!(
                "calibration table uses theta {}, kernel {}, rule {}; this run uses {}, {}, {}",
                k.theta, k.kernel, k.kn_rule, cfg.theta, cfg.kernel, cfg.kn_rule
            ))));
        }
        est.apply_calibration(&t.factors)?;
        diagnostics.push(format!(
            "calibration table was built on {:?} with n_grid {}; its sampling design is not checked against the data",
            k.scheme, k.n_grid
        ));
    }

    // intervals need a variance, so a bare --ci falls back to the block estimator
    let method = cfg.variance.or(cfg.ci.map(|_| VarianceMethod::Subsample));
    let variance = match method {
        None => None,
        Some(VarianceMethod::Subsample) => Some(var_subsample_from(&hp, cfg.subsample)?),
        Some(VarianceMethod::Plugin) => {
            let settings = PluginSettings {
                bandwidth: cfg.bandwidth,
                grid_points: cfg.grid_points,
                ..PluginSettings::default()
            };
            Some(var_plugin(&panel, &tt, &kernel, k_n, &settings)?)
        }
        Some(VarianceMethod::Univariate) => {
            if panel.dim() != 1 {
                return Err(CliError::Usage(format!(
                    "the univariate variance estimator needs one asset, the input has {}",
                    panel.dim()
                )));
            }
            Some(var_univariate(panel.asset(0), &kernel, k_n, effective_theta(k_n, n))?)
        }
    };
    let variance = match (variance, &table) {
        (Some(mut v), Some(t)) => {
            v.apply_calibration(&t.factors)?;
            Some(v)
        }
        (v, _) => v,
    };
    let confidence = match (cfg.ci, &variance) {
        (Some(level), Some(v)) => Some(confidence_region(&est.matrix, v, n, level)?),
        _ => None,
    };

    let report = EstimateReport {
        assets: panel.names(),
        intervals_per_asset: panel.series().iter().map(|s| s.n_intervals()).collect(),
        kernel: cfg.kernel.clone(),
        kn_rule: cfg.kn_rule,
        theta: cfg.theta,
        theta_effective: effective_theta(k_n, n),
        estimate: est,
        calibration_key_hash: table.map(|t| t.key_hash),
        variance: variance.as_ref().map(VarianceReport::from),
        confidence,
        grid: tt.diagnostics().clone(),
        diagnostics,
    };
    emit(&report, out)
}

#[derive(Serialize)]
struct ManifestEntry {
    rep: u64,
    file: String,
    /// Realised integrated covariance the rep should be scored against.
    integrated: Vec<Vec<f64>>,
    noise_variances: [f64; 2],
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    scheme: pahy::sim::SamplingScheme,
    reps: Vec<ManifestEntry>,
}

pub fn simulate(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let seed = require_seed(cfg)?;
    let scheme = scenario(cfg)?.scheme(cfg.model.n_grid);
    std::fs::create_dir_all(dir).map_err(HyError::from)?;
    let entries = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let sim = simulate_rep(&cfg.model, &cfg.noise, &scheme, seed, rep)?;
            let name = format!("rep_{rep:05}.csv");
            let mut w = BufWriter::new(File::create(dir.join(&name))?);
            write_ticks(&sim.panel, &mut w)?;
            w.flush()?;
            Ok(ManifestEntry {
                rep,
                file: name,
                integrated: rows(&sim.integrated),
                noise_variances: sim.noise_variances,
            })
        })
        .collect::<Result<Vec<_>, HyError>>()?;
    info!("wrote {} replications to {}", entries.len(), dir.display());
    let manifest = Manifest {
        config: cfg,
        scheme,
        reps: entries,
    };
    emit(&manifest, Some(&dir.join("manifest.json")))
}

pub enum McCalibration {
    File(PathBuf),
    None,
    /// Built on the fly from `calibration_reps` Brownian repetitions, seeded with `seed + 1`.
    Inline,
}

pub fn mc(cfg: &RunConfig, calibration: McCalibration, out: Option<&Path>) -> Result<(), CliError> {
    let seed = require_seed(cfg)?;
    let mut config = McConfig::new(scenario(cfg)?, seed);
    config.model = cfg.model.clone();
    config.noise = cfg.noise;
    config.theta = cfg.theta;
    config.kn_rule = cfg.kn_rule;
    config.kernel = cfg.kernel.clone();
    config.subsample = cfg.subsample;
    config.reps = cfg.reps;
    if let Some(level) = cfg.ci {
        config.ci_level = level;
    }
    let table = match calibration {
        McCalibration::File(p) => Some(load_calibration(&p)?),
        McCalibration::None => None,
        McCalibration::Inline => {
            let started = Instant::now();
            let t = build_calibration(&config.calibration_key(), cfg.calibration_reps, cfg.rho, seed.wrapping_add(1))?;
            info!("inline calibration took {:.1}s", started.elapsed().as_secs_f64());
            Some(t)
        }
    };
    let report = run_mc(&config, table.as_ref())?;
    info!("{} replications in {:.1}s", report.reps_completed, report.runtime_secs);
    emit(&report, out)
}

pub fn calibrate(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let seed = require_seed(cfg)?;
    let key = CalibrationKey {
        scheme: scenario(cfg)?.scheme(cfg.model.n_grid),
        n_grid: cfg.model.n_grid,
        theta: cfg.theta,
        kernel: cfg.kernel.clone(),
        kn_rule: cfg.kn_rule,
    };
    let table = build_calibration(&key, cfg.calibration_reps, cfg.rho, seed)?;
    emit(&table, out)
}

pub fn kernel_constants(name: &str, out: Option<&Path>) -> Result<(), CliError> {
    let constants = Kernel::by_name(name)?.constants()?;
    emit(&constants, out)
}
