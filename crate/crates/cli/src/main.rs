//! `pahy`: estimate, simulate, calibrate and run the Monte Carlo study.
//!
//! Exit status: 0 success, 2 usage or configuration, 3 invalid data,
//! 4 numerical failure, 1 anything else (typically file I/O).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pahy::preavg::KnRule;
use pahy::variance::VarianceMethod;
use pahy::HyError;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "pahy", version, about = "Pre-averaged Hayashi-Yoshida covariation estimation")]
struct Cli {
    /// Worker threads for the parallel parts; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON settings file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Print the effective settings as JSON instead of running.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the covariation matrix of a tick file.
    Estimate(EstimateArgs),
    /// Write simulated tick files and a manifest with the true covariation.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo study for one sampling design.
    Mc(McArgs),
    /// Build a finite-sample calibration table.
    Calibrate(CalibrateArgs),
    /// Print the constants of a weight function.
    KernelConstants {
        #[arg(long, default_value = "triangle")]
        kernel: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct WindowArgs {
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_parser = parse_kn_rule)]
    kn_rule: Option<KnRule>,
    #[arg(long)]
    kernel: Option<String>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Long-format CSV with header `asset,time,value`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    normalize_time: bool,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, value_parser = parse_variance)]
    variance: Option<VarianceMethod>,
    #[arg(long)]
    varpi: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Accept an `eta` outside (1/2, 2/3).
    #[arg(long)]
    force_eta: bool,
    /// Spot-volatility bandwidth, or `auto` for n^(-1/3).
    #[arg(long)]
    ln: Option<String>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Confidence level; adds entrywise intervals.
    #[arg(long)]
    ci: Option<f64>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeName {
    Subset,
    Shifted,
    Poisson,
}

impl SchemeName {
    fn scenario(self) -> u8 {
        match self {
            SchemeName::Subset => 1,
            SchemeName::Shifted => 2,
            SchemeName::Poisson => 3,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scheme: Option<SchemeName>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_grid: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct McArgs {
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    n_grid: Option<usize>,
    /// Calibration table to apply.
    #[arg(long, conflicts_with = "no_calibration")]
    calibration: Option<PathBuf>,
    /// Score the raw estimator.
    #[arg(long)]
    no_calibration: bool,
    /// Repetitions of the inline calibration run when no table is given.
    #[arg(long)]
    calibration_reps: Option<usize>,
    #[arg(long)]
    ci: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    scheme: Option<SchemeName>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    n_grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_kn_rule(s: &str) -> Result<KnRule, String> {
    s.parse().map_err(|e: HyError| e.to_string())
}

fn parse_variance(s: &str) -> Result<VarianceMethod, String> {
    s.parse().map_err(|e: HyError| e.to_string())
}

/// Failure of a subcommand together with its exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(HyError),
}

impl From<HyError> for CliError {
    fn from(e: HyError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(HyError::Domain(_) | HyError::Precondition(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    let dump = cli.dump_config;
    match cli.command {
        Command::Estimate(a) => {
            a.window.apply(&mut cfg);
            cfg.normalize_time |= a.normalize_time;
            if let Some(v) = a.variance {
                cfg.variance = Some(v);
            }
            if let Some(v) = a.varpi {
                cfg.subsample.varpi = v;
            }
            if let Some(v) = a.eta {
                cfg.subsample.eta = v;
            }
            cfg.subsample.force |= a.force_eta;
            match a.ln.as_deref() {
                None => {}
                Some("auto") => cfg.bandwidth = None,
                Some(s) => {
                    let l: f64 = s.parse().map_err(|_| CliError::Usage(format!("--ln expects a number or 'auto', got '{s}'")))?;
                    cfg.bandwidth = Some(l);
                }
            }
            if let Some(g) = a.grid_points {
                cfg.grid_points = Some(g);
            }
            if let Some(c) = a.ci {
                cfg.ci = Some(c);
            }
            finish(&cfg, dump, |c| commands::estimate(c, &a.input, a.calibration.as_deref(), a.out.as_deref()))
        }
        Command::Simulate(a) => {
            if let Some(s) = a.scheme {
                cfg.scenario = s.scenario();
            }
            override_common(&mut cfg, a.reps, a.seed, a.n_grid);
            finish(&cfg, dump, |c| commands::simulate(c, &a.out))
        }
        Command::Mc(a) => {
            if let Some(s) = a.scenario {
                cfg.scenario = s;
            }
            a.window.apply(&mut cfg);
            override_common(&mut cfg, a.reps, a.seed, a.n_grid);
            if let Some(r) = a.calibration_reps {
                cfg.calibration_reps = r;
            }
            if let Some(c) = a.ci {
                cfg.ci = Some(c);
            }
            let calibration = match (a.calibration, a.no_calibration) {
                (Some(p), _) => commands::McCalibration::File(p),
                (None, true) => commands::McCalibration::None,
                (None, false) => commands::McCalibration::Inline,
            };
            finish(&cfg, dump, |c| commands::mc(c, calibration, a.out.as_deref()))
        }
        Command::Calibrate(a) => {
            if let Some(s) = a.scheme {
                cfg.scenario = s.scenario();
            }
            a.window.apply(&mut cfg);
            override_common(&mut cfg, None, a.seed, a.n_grid);
            if let Some(r) = a.reps {
                cfg.calibration_reps = r;
            }
            if let Some(r) = a.rho {
                cfg.rho = r;
            }
            finish(&cfg, dump, |c| commands::calibrate(c, a.out.as_deref()))
        }
        Command::KernelConstants { kernel, out } => commands::kernel_constants(&kernel, out.as_deref()),
    }
}

fn finish(cfg: &RunConfig, dump: bool, run: impl FnOnce(&RunConfig) -> Result<(), CliError>) -> Result<(), CliError> {
    if dump {
        return commands::print_stdout(&cfg.to_json());
    }
    run(cfg)
}

impl WindowArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(t) = self.theta {
            cfg.theta = t;
        }
        if let Some(r) = self.kn_rule {
            cfg.kn_rule = r;
        }
        if let Some(k) = &self.kernel {
            cfg.kernel = k.clone();
        }
    }
}

fn override_common(cfg: &mut RunConfig, reps: Option<usize>, seed: Option<u64>, n_grid: Option<usize>) {
    if let Some(r) = reps {
        cfg.reps = r;
    }
    if let Some(s) = seed {
        cfg.seed = Some(s);
    }
    if let Some(n) = n_grid {
        cfg.model.n_grid = n;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
