//! Estimators of the asymptotic covariance of `n^{1/4}(HY^n - [X])`.
//!
//! Three routes are provided:
//!
//! * [`var_subsample`]: products of block statistics on neighbouring blocks,
//!   valid in any dimension without knowledge of the sampling design.
//! * [`var_plugin`]: the limit formula with spot volatility, noise
//!   covariance and overlap functionals of the empirical time transform.
//! * [`var_univariate`]: pre-averaged quarticity for `d = 1`.

use std::collections::HashMap;
use std::sync::Mutex;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HyError, Result};
use crate::grids::{Panel, TickSeries, TimeTransform};
use crate::hy::HyPanel;
use crate::kernel::{Kernel, Overlap};
use crate::matrix::{serde_rows, Matrix};
use crate::quadrature;

/// Noise covariance estimate `Ψ_n` with the joint counts it rests on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseCov {
    #[serde(with = "serde_rows")]
    pub matrix: Matrix,
    /// `[k][l]`: joint intervals `n_kl` (common points minus one).
    pub joint_counts: Vec<Vec<usize>>,
    /// `[k][l]`: the entry is undefined (no joint intervals) and was set to 0.
    pub undefined: Vec<Vec<bool>>,
    /// Assets with a negative diagonal estimate.
    pub negative_diagonal: Vec<usize>,
}

impl NoiseCov {
    /// `(Ψ + Ψᵀ) / 2`; the printed estimator is not symmetric in finite samples.
    pub fn symmetrized(&self) -> Matrix {
        (&self.matrix + self.matrix.transpose()) * 0.5
    }
}

/// `Ψ_n^{kl} = -(1/n_kl) Σ_p Δ_{t_{i(p,k,l)}} Y^k · Δ_{t_{i(p,l,k)+1}} Y^l`.
///
/// Only common points whose two increments both exist contribute; the
/// normaliser is the number of joint intervals.
pub fn noise_cov(panel: &Panel, tt: &TimeTransform) -> Result<NoiseCov> {
    let d = panel.dim();
    if tt.dim() != d {
        return Err(HyError::Domain(format!(
            "time transform has dimension {} but panel has {d}",
            tt.dim()
        )));
    }
    let mut m = DMatrix::zeros(d, d);
    let mut counts = vec![vec![0; d]; d];
    let mut undefined = vec![vec![false; d]; d];
    for k in 0..d {
        for l in 0..d {
            let joint = tt.joint(k, l);
            let n_kl = joint.n_joint;
            counts[k][l] = n_kl;
            if n_kl == 0 {
                undefined[k][l] = true;
                continue;
            }
            let yk = panel.asset(k).values();
            let yl = panel.asset(l).values();
            let mut acc = 0.0;
            for p in &joint.points {
                let (i, j) = (p.index_k, p.index_l);
                if i >= 1 && j + 1 < yl.len() {
                    acc += (yk[i] - yk[i - 1]) * (yl[j + 1] - yl[j]);
                }
            }
            m[(k, l)] = -acc / n_kl as f64;
        }
    }
    let negative_diagonal = (0..d).filter(|&k| m[(k, k)] < 0.0).collect();
    Ok(NoiseCov {
        matrix: m,
        joint_counts: counts,
        undefined,
        negative_diagonal,
    })
}

/// Spot covariance estimates `Σ_{s,n}` at a set of times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpotVol {
    pub times: Vec<f64>,
    #[serde(with = "serde_matrices")]
    pub values: Vec<Matrix>,
    pub bandwidth: f64,
}

mod serde_matrices {
    use crate::matrix::{from_rows, to_rows, Matrix};
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .iter()
            .map(|r| from_rows(r).ok_or_else(|| D::Error::custom("ragged matrix rows")))
            .collect()
    }
}

/// Default spot-volatility bandwidth `n^{-1/3}`.
pub fn default_bandwidth(n: usize) -> f64 {
    (n as f64).powf(-1.0 / 3.0)
}

/// `Σ_{s,n} = (HY^n([0, s]) - HY^n([0, s - l_n])) / l_n`, with `s < l_n`
/// evaluated at `s = l_n`.
pub fn spot_vol(panel: &Panel, kernel: &Kernel, k_n: usize, l_n: f64, times: &[f64]) -> Result<SpotVol> {
    let hp = HyPanel::new(panel, kernel, k_n)?;
    spot_vol_from(&hp, l_n, times)
}

pub(crate) fn spot_vol_from(hp: &HyPanel, l_n: f64, times: &[f64]) -> Result<SpotVol> {
    if !(l_n > 0.0 && l_n < 1.0) {
        return Err(HyError::Domain(format!("bandwidth l_n must lie in (0, 1), got {l_n}")));
    }
    if let Some(&s) = times.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(HyError::Domain(format!("spot volatility time {s} outside [0, 1]")));
    }
    let root_n_ln = (hp.n_total() as f64).sqrt() * l_n;
    if root_n_ln < 5.0 {
        warn!("bandwidth l_n = {l_n} is small: sqrt(n) * l_n = {root_n_ln:.2} < 5");
    }
    let sums = hp.partial_sums();
    let values = times
        .iter()
        .map(|&s| {
            let s = s.max(l_n);
            (sums.at(s) - sums.at(s - l_n)) / l_n
        })
        .collect();
    Ok(SpotVol {
        times: times.to_vec(),
        values,
        bandwidth: l_n,
    })
}

/// Which estimator produced a [`VarianceTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    Subsample,
    Plugin,
    Univariate,
}

impl std::str::FromStr for VarianceMethod {
    type Err = HyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subsample" => Ok(Self::Subsample),
            "plugin" => Ok(Self::Plugin),
            "univariate" => Ok(Self::Univariate),
            other => Err(HyError::Domain(format!(
                "unknown variance method '{other}' (subsample|plugin|univariate)"
            ))),
        }
    }
}

impl std::fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Subsample => "subsample",
            Self::Plugin => "plugin",
            Self::Univariate => "univariate",
        })
    }
}

/// Four-index array `V_{kl,k'l'}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceTensor {
    dim: usize,
    method: VarianceMethod,
    /// Row-major over `(k, l, k', l')`.
    values: Vec<f64>,
    /// `(k, l)` pairs whose variance `V_{kl,kl}` is negative or not finite.
    flagged: Vec<(usize, usize)>,
    pub diagnostics: Vec<String>,
}

impl VarianceTensor {
    pub fn zeros(dim: usize, method: VarianceMethod) -> Self {
        Self {
            dim,
            method,
            values: vec![0.0; dim.pow(4)],
            flagged: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    /// Builds a tensor from its `d² × d²` vec view.
    pub fn from_vec_matrix(v: &Matrix, method: VarianceMethod) -> Result<Self> {
        let dd = v.nrows();
        let d = (dd as f64).sqrt().round() as usize;
        if v.ncols() != dd || d * d != dd {
            return Err(HyError::Domain(format!(
                "vec view must be square with side d², got {:?}",
                v.shape()
            )));
        }
        let mut t = Self::zeros(d, method);
        for (r, c, k, l, kp, lp) in vec_index_map(d) {
            t.set(k, l, kp, lp, v[(r, c)]);
        }
        t.refresh_flags();
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn method(&self) -> VarianceMethod {
        self.method
    }

    fn offset(&self, k: usize, l: usize, kp: usize, lp: usize) -> usize {
        let d = self.dim;
        ((k * d + l) * d + kp) * d + lp
    }

    pub fn get(&self, k: usize, l: usize, kp: usize, lp: usize) -> f64 {
        self.values[self.offset(k, l, kp, lp)]
    }

    pub fn set(&mut self, k: usize, l: usize, kp: usize, lp: usize, v: f64) {
        let o = self.offset(k, l, kp, lp);
        self.values[o] = v;
    }

    /// `V_{kl,kl}`.
    pub fn diagonal(&self, k: usize, l: usize) -> f64 {
        self.get(k, l, k, l)
    }

    pub fn flagged(&self) -> &[(usize, usize)] {
        &self.flagged
    }

    pub fn is_flagged(&self, k: usize, l: usize) -> bool {
        self.flagged.contains(&(k, l))
    }

    pub(crate) fn refresh_flags(&mut self) {
        let d = self.dim;
        self.flagged = (0..d)
            .flat_map(|k| (0..d).map(move |l| (k, l)))
            .filter(|&(k, l)| {
                let v = self.diagonal(k, l);
                !(v >= 0.0) || !v.is_finite()
            })
            .collect();
    }

    /// The `d² × d²` matrix `V̂` acting on column-stacked `vec` vectors.
    pub fn vec_matrix(&self) -> Matrix {
        let dd = self.dim * self.dim;
        let mut m = DMatrix::zeros(dd, dd);
        for (r, c, k, l, kp, lp) in vec_index_map(self.dim) {
            m[(r, c)] = self.get(k, l, kp, lp);
        }
        m
    }

    /// Scales `V_{kl,k'l'}` by `1 / (c_kl c_k'l')`, matching an estimate
    /// whose entries were divided by `c`.
    pub fn apply_calibration(&mut self, factors: &Matrix) -> Result<()> {
        let d = self.dim;
        if factors.shape() != (d, d) {
            return Err(HyError::Domain(format!(
                "calibration is {:?} but variance has dimension {d}",
                factors.shape()
            )));
        }
        for k in 0..d {
            for l in 0..d {
                for kp in 0..d {
                    for lp in 0..d {
                        let v = self.get(k, l, kp, lp) / (factors[(k, l)] * factors[(kp, lp)]);
                        self.set(k, l, kp, lp, v);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Every `(row, col, k, l, k', l')` of the vec view, 0-based:
/// `row = k + d·l`, `col = k' + d·l'`.
pub fn vec_index_map(d: usize) -> impl Iterator<Item = (usize, usize, usize, usize, usize, usize)> {
    let dd = d * d;
    (0..dd).flat_map(move |r| {
        (0..dd).map(move |c| {
            let (k, l) = (r % d, r / d);
            let (kp, lp) = (c % d, c / d);
            (r, c, k, l, kp, lp)
        })
    })
}

/// Tuning of the block estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsampleSettings {
    pub varpi: f64,
    pub eta: f64,
    /// Accept `eta` outside `(1/2, 2/3)` with a warning instead of failing.
    pub force: bool,
}

impl Default for SubsampleSettings {
    fn default() -> Self {
        Self {
            varpi: 1.0,
            eta: 7.0 / 12.0,
            force: false,
        }
    }
}

/// Block length `β_n = round(ϖ n^η)`, at least one.
pub fn block_length(n: usize, varpi: f64, eta: f64) -> usize {
    ((varpi * (n as f64).powf(eta)).round() as usize).max(1)
}

/// Block estimator `V^{n,1}`.
///
/// Block statistics `HY_kl(α)` restrict the `k`-window start to
/// `[αβ_n/n, (α+1)β_n/n)`; windows starting beyond the last full block are
/// left out, as are blocks past `[n/β_n] - 1`.
pub fn var_subsample(panel: &Panel, kernel: &Kernel, k_n: usize, settings: SubsampleSettings) -> Result<VarianceTensor> {
    let hp = HyPanel::new(panel, kernel, k_n)?;
    var_subsample_from(&hp, settings)
}

/// Block estimator on an already pre-averaged panel.
pub fn var_subsample_from(hp: &HyPanel, settings: SubsampleSettings) -> Result<VarianceTensor> {
    let SubsampleSettings { varpi, eta, force } = settings;
    if !(varpi > 0.0) || !varpi.is_finite() {
        return Err(HyError::Domain(format!("varpi must be positive, got {varpi}")));
    }
    let mut diagnostics = Vec::new();
    if !(eta > 0.5 && eta < 2.0 / 3.0) {
        if !force {
            return Err(HyError::Precondition(format!("eta = {eta} must lie in (1/2, 2/3)")));
        }
        let msg = format!("eta = {eta} outside (1/2, 2/3); consistency is not guaranteed");
        warn!("{msg}");
        diagnostics.push(msg);
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(HyError::Domain(format!("eta = {eta} must lie in (0, 1)")));
    }
    let n = hp.n_total();
    let beta = block_length(n, varpi, eta);
    let blocks = n / beta;
    if blocks < 3 {
        return Err(HyError::Precondition(format!(
            "only {blocks} blocks of length {beta} for n = {n}; at least 3 are needed"
        )));
    }
    let d = hp.dim();
    let width = beta as f64 / n as f64;
    // stats[k * d + l][α]
    let stats: Vec<Vec<f64>> = (0..d * d)
        .into_par_iter()
        .map(|kl| {
            let (k, l) = (kl / d, kl % d);
            let mut h = vec![0.0; blocks];
            for (i, r) in hp.row_contributions(k, l).into_iter().enumerate() {
                let a = (hp.window_starts(k)[i] / width).floor() as usize;
                if a < blocks {
                    h[a] += r;
                }
            }
            h
        })
        .collect();
    let root_n = (n as f64).sqrt();
    let mut t = VarianceTensor::zeros(d, VarianceMethod::Subsample);
    t.diagnostics = diagnostics;
    for a in 0..d * d {
        for b in 0..d * d {
            let (x, y) = (&stats[a], &stats[b]);
            let mut acc = 0.0;
            for al in 1..blocks {
                acc += 2.0 * x[al] * y[al] - x[al] * y[al - 1] - x[al - 1] * y[al];
            }
            t.set(a / d, a % d, b / d, b % d, 0.5 * root_n * acc);
        }
    }
    t.refresh_flags();
    let notes: Vec<String> = t
        .flagged()
        .iter()
        .map(|&(k, l)| format!("V[{k}{l},{k}{l}] = {} is negative", t.diagonal(k, l)))
        .collect();
    for msg in notes {
        warn!("{msg}");
        t.diagnostics.push(msg);
    }
    Ok(t)
}

/// `θ` implied by the window actually used: `k_n / √n`.
pub fn effective_theta(k_n: usize, n: usize) -> f64 {
    k_n as f64 / (n as f64).sqrt()
}

/// Univariate estimator `V^{n,3}` built on pre-averaged quarticity.
pub fn var_univariate(series: &TickSeries, kernel: &Kernel, k_n: usize, theta: f64) -> Result<VarianceTensor> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(HyError::Domain(format!("theta must be positive, got {theta}")));
    }
    let panel = Panel::new(vec![series.clone()])?;
    let hp = HyPanel::new(&panel, kernel, k_n)?;
    // i = 1, ..., n - k_n + 1
    let quarticity: f64 = hp.preaveraged(0)[1..].iter().map(|y| y.powi(4)).sum();
    let hy = hp.pair(0, 0).0;
    let y = series.values();
    let n1 = series.n_intervals();
    let mut acc = 0.0;
    for i in 1..n1 {
        acc += (y[i] - y[i - 1]) * (y[i + 1] - y[i]);
    }
    let psi_n = -acc / n1 as f64;
    let c = kernel.constants()?;
    // Finite-window sums instead of the limits: the three terms cancel
    // heavily, so an O(1/k_n) error in μ̃ would otherwise dominate.
    let (mu, mu_t) = kernel.discrete_mu(k_n);
    let v = 2.0 / c.psi.powi(4)
        * (c.kappa / (3.0 * theta * mu * mu) * quarticity
            + 2.0 / theta * psi_n * hy * (c.kappa_bar - c.kappa * mu_t / mu)
            + psi_n * psi_n / theta.powi(3) * (c.kappa_tilde - c.kappa * mu_t * mu_t / (mu * mu)));
    let mut t = VarianceTensor::zeros(1, VarianceMethod::Univariate);
    t.set(0, 0, 0, 0, v);
    t.refresh_flags();
    if !t.flagged().is_empty() {
        t.diagnostics.push(format!("V = {v} is negative"));
    }
    Ok(t)
}

/// `∫ ψ_A(s, x1) ψ_A(a s, x2) ds` for the three overlap pairs `A`.
///
/// The integrand vanishes outside `|s| < min(1 + 1/x1, (1 + 1/x2)/a)`.
pub fn overlap_product_integrals(kernel: &Kernel, x1: f64, a: f64, x2: f64) -> Result<[f64; 3]> {
    for (name, v) in [("x1", x1), ("a", a), ("x2", x2)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(HyError::Domain(format!("overlap product needs {name} > 0, got {v}")));
        }
    }
    let reach = Kernel::overlap_support(x1).min(Kernel::overlap_support(x2) / a);
    let mut breaks = kernel.overlap_breaks(x1);
    breaks.extend(kernel.overlap_breaks(x2).into_iter().map(|b| b / a));
    breaks.push(0.0);
    let q = kernel.quad_settings();
    let mut out = [0.0; 3];
    for (slot, which) in out.iter_mut().zip(Overlap::ALL) {
        let r = quadrature::adaptive(
            |s| kernel.psi_overlap_unchecked(s, x1, which) * kernel.psi_overlap_unchecked(a * s, x2, which),
            -reach,
            reach,
            &breaks,
            q.abs_tol,
            q.max_panels,
        )
        .map_err(|e| HyError::Numerical(format!("overlap product ({x1}, {a}, {x2}), {which:?}: {e}")))?;
        *slot = r.value;
    }
    Ok(out)
}

/// Memo of [`overlap_product_integrals`] keyed by rounded log-arguments.
#[derive(Debug, Default)]
pub struct GammaCache {
    map: Mutex<HashMap<(i64, i64, i64), [f64; 3]>>,
}

impl GammaCache {
    const RESOLUTION: f64 = 1e-9;

    pub fn new() -> Self {
        Self::default()
    }

    fn key(v: f64) -> i64 {
        (v.ln() / Self::RESOLUTION).round() as i64
    }

    pub fn integrals(&self, kernel: &Kernel, x1: f64, a: f64, x2: f64) -> Result<[f64; 3]> {
        let key = (Self::key(x1), Self::key(a), Self::key(x2));
        if let Some(v) = self.map.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = overlap_product_integrals(kernel, x1, a, x2)?;
        self.map.lock().unwrap().insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(γ, γ̄, γ̃)_{kl,k'l'}(u)`.
///
/// `γ̄` vanishes when the `(k, k')` joint grid carries no transform, and `γ̃`
/// additionally when the `(l, l')` one does not.
pub fn gamma_functions(
    tt: &TimeTransform,
    kernel: &Kernel,
    u: f64,
    idx: [usize; 4],
) -> Result<(f64, f64, f64)> {
    gamma_functions_cached(tt, kernel, u, idx, &GammaCache::new())
}

pub fn gamma_functions_cached(
    tt: &TimeTransform,
    kernel: &Kernel,
    u: f64,
    idx: [usize; 4],
    cache: &GammaCache,
) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&u) {
        return Err(HyError::Domain(format!("u = {u} outside [0, 1]")));
    }
    let d = tt.dim();
    if idx.iter().any(|&i| i >= d) {
        return Err(HyError::Domain(format!("index {idx:?} out of range for d = {d}")));
    }
    let [k, l, kp, lp] = idx;
    let dens_l = tt.share(l) * tt.f_prime(l, u);
    let ints = cache.integrals(kernel, tt.h(k, l, u), tt.h(lp, l, u), tt.h(kp, lp, u))?;
    let gamma = ints[0] / dens_l;
    let jk = tt.joint_density(k, kp, u).filter(|v| *v > 0.0);
    let jl = tt.joint_density(l, lp, u).filter(|v| *v > 0.0);
    let gamma_bar = jk.map_or(0.0, |a| a / dens_l * ints[1]);
    let gamma_tilde = match (jk, jl) {
        (Some(a), Some(b)) => a * b / dens_l * ints[2],
        _ => 0.0,
    };
    Ok((gamma, gamma_bar, gamma_tilde))
}

/// Tuning of the plug-in estimator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PluginSettings {
    /// Spot-volatility bandwidth; `n^{-1/3}` when absent.
    pub bandwidth: Option<f64>,
    /// Simpson nodes on `[0, 1]` (odd, at least 101); 101 when absent.
    pub grid_points: Option<usize>,
    /// Replaces the estimated noise covariance, e.g. with a known value.
    #[serde(skip)]
    pub noise_override: Option<Matrix>,
}

/// Plug-in estimator `V^{n,2}`.
pub fn var_plugin(
    panel: &Panel,
    tt: &TimeTransform,
    kernel: &Kernel,
    k_n: usize,
    settings: &PluginSettings,
) -> Result<VarianceTensor> {
    let d = panel.dim();
    let n = panel.n_total();
    let hp = HyPanel::new(panel, kernel, k_n)?;
    let l_n = settings.bandwidth.unwrap_or_else(|| default_bandwidth(n));
    let mut nodes = settings.grid_points.unwrap_or(101).max(101);
    if nodes.is_multiple_of(2) {
        nodes += 1;
    }
    let grid: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
    let spot = spot_vol_from(&hp, l_n, &grid)?;
    let noise = match &settings.noise_override {
        Some(m) if m.shape() == (d, d) => m.clone(),
        Some(m) => {
            return Err(HyError::Domain(format!(
                "noise override is {:?} but panel has dimension {d}",
                m.shape()
            )))
        }
        None => noise_cov(panel, tt)?.symmetrized(),
    };
    let theta = effective_theta(k_n, n);
    let psi4 = kernel.psi().powi(4);

    let mut diagnostics = Vec::new();
    for k in 0..d {
        for l in k + 1..d {
            if tt.joint(k, l).map.is_none() {
                diagnostics.push(format!(
                    "assets {k} and {l} share {} joint intervals; their noise cross terms are dropped",
                    tt.joint(k, l).n_joint
                ));
            }
        }
    }

    // unique (kl, k'l') combinations up to the swap symmetry
    let combos: Vec<(usize, usize)> = (0..d * d).flat_map(|a| (a..d * d).map(move |b| (a, b))).collect();
    let cache = GammaCache::new();
    let weights: Vec<f64> = (0..nodes)
        .map(|i| {
            let w = if i == 0 || i == nodes - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w / (3.0 * (nodes - 1) as f64)
        })
        .collect();
    let values: Vec<f64> = combos
        .par_iter()
        .map(|&(a, b)| -> Result<f64> {
            let (k, l, kp, lp) = (a / d, a % d, b / d, b % d);
            let mut acc = 0.0;
            for (i, &u) in grid.iter().enumerate() {
                let s = &spot.values[i];
                let g1 = gamma_functions_cached(tt, kernel, u, [k, l, kp, lp], &cache)?;
                let g2 = gamma_functions_cached(tt, kernel, u, [k, l, lp, kp], &cache)?;
                let gb3 = gamma_functions_cached(tt, kernel, u, [l, k, lp, kp], &cache)?.1;
                let gb4 = gamma_functions_cached(tt, kernel, u, [l, k, kp, lp], &cache)?.1;
                let diffusion = theta * (g1.0 * s[(k, kp)] * s[(l, lp)] + g2.0 * s[(k, lp)] * s[(l, kp)]);
                let mixed = (noise[(l, lp)] * gb3 * s[(k, kp)]
                    + noise[(l, kp)] * gb4 * s[(k, lp)]
                    + noise[(k, lp)] * g2.1 * s[(l, kp)]
                    + noise[(k, kp)] * g1.1 * s[(l, lp)])
                    / theta;
                let pure = (noise[(k, kp)] * noise[(l, lp)] * g1.2 + noise[(k, lp)] * noise[(l, kp)] * g2.2)
                    / theta.powi(3);
                acc += weights[i] * (diffusion + mixed + pure);
            }
            Ok(acc / psi4)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t = VarianceTensor::zeros(d, VarianceMethod::Plugin);
    for (&(a, b), &v) in combos.iter().zip(&values) {
        t.set(a / d, a % d, b / d, b % d, v);
        t.set(b / d, b % d, a / d, a % d, v);
    }
    t.refresh_flags();
    for &(k, l) in t.flagged() {
        diagnostics.push(format!("V[{k}{l},{k}{l}] = {} is negative", t.diagonal(k, l)));
    }
    t.diagnostics = diagnostics;
    Ok(t)
}
