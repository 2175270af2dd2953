//! Pre-averaged Hayashi–Yoshida estimation of integrated covariance from
//! asynchronous, noisy tick data, with variance estimation, inference and a
//! Monte Carlo harness.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grids;
pub mod hy;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod matrix;
pub mod mc;
pub mod preavg;
pub mod quadrature;
pub mod sim;
pub mod variance;

pub use error::{HyError, Result};
pub use grids::{build_panel, empirical_time_transform, Panel, TickSeries, TimeTransform};
pub use hy::{hy_block, hy_matrix, hy_naive_oracle, hy_partial, CovEstimate, HyPanel};
pub use kernel::{Kernel, KernelConstants};
pub use matrix::Matrix;
pub use preavg::{preaverage, window_size, KnRule, PreAveraged};
pub use inference::{confidence_region, optimal_theta, parametric_variance, standardize, ConfidenceRegion};
pub use io::{read_ticks, write_ticks};
pub use mc::{run_mc, McConfig, McReport, Scenario};
pub use sim::{calibrate, simulate_rep, CalibrationKey, CalibrationTable, NoiseSpec, SamplingScheme, SvModelParams};
pub use variance::{
    noise_cov, spot_vol, var_plugin, var_subsample, var_univariate, PluginSettings, SubsampleSettings, VarianceMethod,
    VarianceTensor,
};
