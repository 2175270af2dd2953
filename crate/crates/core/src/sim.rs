//! Data-generating process of the simulation study: a bivariate stochastic
//! volatility model with log-volatility driven by Ornstein–Uhlenbeck
//! factors, additive noise, non-synchronous sampling, and the Brownian
//! calibration of the finite-sample bias.

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HyError, Result};
use crate::grids::{Panel, TickSeries};
use crate::hy::HyPanel;
use crate::kernel::Kernel;
use crate::matrix::{serde_rows, Matrix};
use crate::preavg::{window_size, KnRule};

/// Independent random streams of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Latent = 0,
    Noise = 1,
    Sampling = 2,
    Calibration = 3,
}

/// Generator for `(seed, replication, stream)`: the same triple always gives
/// the same numbers, whatever the thread layout.
pub fn stream_rng(seed: u64, rep: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((rep << 8) | stream as u64);
    rng
}

/// Parameters of one asset's price and volatility factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetParams {
    pub drift: f64,
    pub beta0: f64,
    pub beta1: f64,
    /// Mean reversion of the volatility factor; negative.
    pub alpha: f64,
    /// Loading on the idiosyncratic (leverage) shock.
    pub rho: f64,
}

impl Default for AssetParams {
    fn default() -> Self {
        Self {
            drift: 0.03,
            beta0: -5.0 / 16.0,
            beta1: 1.0 / 8.0,
            alpha: -1.0 / 40.0,
            rho: -0.3,
        }
    }
}

impl AssetParams {
    fn validate(&self, i: usize) -> Result<()> {
        if !(self.alpha < 0.0) {
            return Err(HyError::Domain(format!("asset {i}: alpha must be negative, got {}", self.alpha)));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(HyError::Domain(format!("asset {i}: |rho| must not exceed 1, got {}", self.rho)));
        }
        for (name, v) in [("drift", self.drift), ("beta0", self.beta0), ("beta1", self.beta1)] {
            if !v.is_finite() {
                return Err(HyError::Domain(format!("asset {i}: {name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Bivariate model on a grid of `n_grid` equal steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvModelParams {
    pub assets: [AssetParams; 2],
    pub n_grid: usize,
}

impl Default for SvModelParams {
    fn default() -> Self {
        Self {
            assets: [AssetParams::default(); 2],
            n_grid: 23_400,
        }
    }
}

impl SvModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 2 {
            return Err(HyError::Domain(format!("grid size must be at least 2, got {}", self.n_grid)));
        }
        for (i, a) in self.assets.iter().enumerate() {
            a.validate(i)?;
        }
        Ok(())
    }
}

/// Latent paths at times `j / N`, `j = 0, …, N`.
#[derive(Debug, Clone)]
pub struct LatentPaths {
    pub x: [Vec<f64>; 2],
    pub sigma: [Vec<f64>; 2],
    /// Left Riemann sums of `Σ = σσ*` over `[0, 1]`.
    pub integrated: Matrix,
}

/// Simulates the model: exact OU steps for the volatility factors, Euler
/// steps for the prices with the volatility frozen at the left point.
pub fn simulate_sv<R: Rng>(params: &SvModelParams, rng: &mut R) -> Result<LatentPaths> {
    params.validate()?;
    let n = params.n_grid;
    let dt = 1.0 / n as f64;
    let sdt = dt.sqrt();
    let mut x = [vec![0.0; n + 1], vec![0.0; n + 1]];
    let mut sigma = [vec![0.0; n + 1], vec![0.0; n + 1]];
    let mut rho_state = [0.0; 2];
    struct Step {
        decay: f64,
        load: f64,
        resid: f64,
    }
    let steps: Vec<Step> = params
        .assets
        .iter()
        .map(|a| {
            let decay = (a.alpha * dt).exp();
            let var_xi = ((2.0 * a.alpha * dt).exp() - 1.0) / (2.0 * a.alpha);
            // ξ = c ΔB + independent remainder, Cov(ξ, ΔB) = (e^{αΔ} - 1)/α
            let load = ((a.alpha * dt).exp() - 1.0) / a.alpha / dt;
            let resid = (var_xi - load * load * dt).max(0.0).sqrt();
            Step { decay, load, resid }
        })
        .collect();
    for (i, a) in params.assets.iter().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        rho_state[i] = z * (-0.5 / a.alpha).sqrt();
        sigma[i][0] = (a.beta0 + a.beta1 * rho_state[i]).exp();
    }
    let mut s11 = 0.0;
    let mut s22 = 0.0;
    let mut s12 = 0.0;
    for j in 0..n {
        let dw = sdt * rng.sample::<f64, _>(StandardNormal);
        let (s1, s2) = (sigma[0][j], sigma[1][j]);
        s11 += s1 * s1;
        s22 += s2 * s2;
        s12 += s1 * s2;
        for i in 0..2 {
            let a = &params.assets[i];
            let st = &steps[i];
            let db = sdt * rng.sample::<f64, _>(StandardNormal);
            let rem: f64 = rng.sample(StandardNormal);
            let s = sigma[i][j];
            x[i][j + 1] = x[i][j] + a.drift * dt + a.rho * s * db + (1.0 - a.rho * a.rho).sqrt() * s * dw;
            rho_state[i] = st.decay * rho_state[i] + st.load * db + st.resid * rem;
            sigma[i][j + 1] = (a.beta0 + a.beta1 * rho_state[i]).exp();
        }
    }
    let c = params.assets.iter().map(|a| (1.0 - a.rho * a.rho).sqrt()).product::<f64>();
    let integrated = DMatrix::from_row_slice(2, 2, &[s11 * dt, c * s12 * dt, c * s12 * dt, s22 * dt]);
    Ok(LatentPaths { x, sigma, integrated })
}

/// How the noise ratio is turned into a noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScale {
    /// `ω² = γ² · (1/N) · mean(σ²)`: noise relative to the variance of one
    /// grid increment.
    #[default]
    PerIncrement,
    /// `ω² = γ² · mean(σ²)`: noise relative to the integrated variance.
    Level,
}

/// Serial dependence of the noise in tick time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Iid,
    /// `ε_i = ω (a₀ Z_i + a₁ Z_{i-1})` with `a₀² + a₁² = 1`, `a₁/a₀ = theta`.
    Ma1 { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub ratio: f64,
    pub scale: NoiseScale,
    pub kind: NoiseKind,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            scale: NoiseScale::PerIncrement,
            kind: NoiseKind::Iid,
        }
    }
}

/// `ω²` from the realised volatility path `σ_{j/N}`, `j = 1, …, N`.
pub fn noise_variance(sigma: &[f64], spec: &NoiseSpec) -> Result<f64> {
    if !(spec.ratio >= 0.0) || !spec.ratio.is_finite() {
        return Err(HyError::Domain(format!("noise ratio must be non-negative, got {}", spec.ratio)));
    }
    if sigma.len() < 2 {
        return Err(HyError::Domain("volatility path needs at least two points".into()));
    }
    let steps = sigma.len() - 1;
    let mean_sq = sigma[1..].iter().map(|s| s * s).sum::<f64>() / steps as f64;
    let level = spec.ratio * spec.ratio * mean_sq;
    Ok(match spec.scale {
        NoiseScale::PerIncrement => level / steps as f64,
        NoiseScale::Level => level,
    })
}

/// MA(1) coefficients with unit squared sum.
pub fn ma1_coefficients(theta: f64) -> (f64, f64) {
    let norm = (1.0 + theta * theta).sqrt();
    (1.0 / norm, theta / norm)
}

/// Adds centred Gaussian noise of variance `omega2` to each observation.
pub fn add_noise<R: Rng>(values: &[f64], omega2: f64, kind: NoiseKind, rng: &mut R) -> Result<Vec<f64>> {
    if !(omega2 >= 0.0) || !omega2.is_finite() {
        return Err(HyError::Domain(format!("noise variance must be non-negative, got {omega2}")));
    }
    let omega = omega2.sqrt();
    Ok(match kind {
        NoiseKind::Iid => values.iter().map(|v| v + omega * rng.sample::<f64, _>(StandardNormal)).collect(),
        NoiseKind::Ma1 { theta } => {
            if !theta.is_finite() {
                return Err(HyError::Domain("MA(1) coefficient must be finite".into()));
            }
            let (a0, a1) = ma1_coefficients(theta);
            let mut prev: f64 = rng.sample(StandardNormal);
            values
                .iter()
                .map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    let e = omega * (a0 * z + a1 * prev);
                    prev = z;
                    v + e
                })
                .collect()
        }
    })
}

/// How the two assets are observed on the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplingScheme {
    /// Asset 1 every `N/n1`-th point, asset 2 every `N/n2`-th, both from 0.
    Subset { n1: usize, n2: usize },
    /// Both every `N/n1`-th point, asset 2 shifted by half a spacing
    /// (rounded down to the grid).
    Shifted { n1: usize },
    /// Geometric waiting times with means `lambda1`, `lambda2` grid steps.
    Poisson { lambda1: f64, lambda2: f64 },
}

impl SamplingScheme {
    pub fn validate(&self, n_grid: usize) -> Result<()> {
        match *self {
            SamplingScheme::Subset { n1, n2 } => {
                if n1 == 0 || n2 == 0 || !n1.is_multiple_of(n2) || !n_grid.is_multiple_of(n1) {
                    return Err(HyError::Domain(format!(
                        "subset scheme needs n2 | n1 | N (n1 = {n1}, n2 = {n2}, N = {n_grid})"
                    )));
                }
            }
            SamplingScheme::Shifted { n1 } => {
                if n1 == 0 || !n_grid.is_multiple_of(n1) || n_grid / n1 < 2 {
                    return Err(HyError::Domain(format!(
                        "shifted scheme needs n1 | N with spacing at least 2 (n1 = {n1}, N = {n_grid})"
                    )));
                }
            }
            SamplingScheme::Poisson { lambda1, lambda2 } => {
                if !(lambda1 >= 1.0 && lambda2 >= 1.0) {
                    return Err(HyError::Domain(format!(
                        "Poisson scheme needs waiting-time means >= 1 (got {lambda1}, {lambda2})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Grid indices observed for each asset.
    pub fn indices<R: Rng>(&self, n_grid: usize, rng: &mut R) -> Result<[Vec<usize>; 2]> {
        self.validate(n_grid)?;
        Ok(match *self {
            SamplingScheme::Subset { n1, n2 } => {
                [(0..=n_grid).step_by(n_grid / n1).collect(), (0..=n_grid).step_by(n_grid / n2).collect()]
            }
            SamplingScheme::Shifted { n1 } => {
                let h = n_grid / n1;
                [(0..=n_grid).step_by(h).collect(), (h / 2..n_grid).step_by(h).collect()]
            }
            SamplingScheme::Poisson { lambda1, lambda2 } => {
                [poisson_indices(n_grid, lambda1, rng)?, poisson_indices(n_grid, lambda2, rng)?]
            }
        })
    }
}

fn poisson_indices<R: Rng>(n_grid: usize, lambda: f64, rng: &mut R) -> Result<Vec<usize>> {
    let geo = Geometric::new(1.0 / lambda).map_err(|e| HyError::Domain(e.to_string()))?;
    let mut out = vec![0];
    let mut j = 0usize;
    loop {
        j = j.saturating_add(1 + geo.sample(rng) as usize);
        if j >= n_grid {
            break;
        }
        out.push(j);
    }
    out.push(n_grid);
    Ok(out)
}

/// Extracts the observed ticks of both assets from grid paths.
pub fn apply_scheme<R: Rng>(paths: &[Vec<f64>; 2], scheme: &SamplingScheme, rng: &mut R) -> Result<Panel> {
    let n_grid = paths[0].len() - 1;
    if paths[1].len() != n_grid + 1 {
        return Err(HyError::Domain("both grid paths must have the same length".into()));
    }
    let idx = scheme.indices(n_grid, rng)?;
    let series = idx
        .iter()
        .zip(paths)
        .enumerate()
        .map(|(a, (ix, p))| {
            TickSeries::new(
                format!("asset{}", a + 1),
                ix.iter().map(|&j| j as f64 / n_grid as f64).collect(),
                ix.iter().map(|&j| p[j]).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Panel::new(series)
}

/// One replication: latent paths, the noisy observed panel, and the
/// realised integrated covariance it should be scored against.
#[derive(Debug, Clone)]
pub struct SimulatedRep {
    pub panel: Panel,
    pub integrated: Matrix,
    pub noise_variances: [f64; 2],
}

pub fn simulate_rep(
    model: &SvModelParams,
    noise: &NoiseSpec,
    scheme: &SamplingScheme,
    seed: u64,
    rep: u64,
) -> Result<SimulatedRep> {
    let latent = simulate_sv(model, &mut stream_rng(seed, rep, Stream::Latent))?;
    let clean = apply_scheme(&latent.x, scheme, &mut stream_rng(seed, rep, Stream::Sampling))?;
    let mut noise_rng = stream_rng(seed, rep, Stream::Noise);
    let mut omega2 = [0.0; 2];
    let mut series = Vec::with_capacity(2);
    for (i, s) in clean.series().iter().enumerate() {
        omega2[i] = noise_variance(&latent.sigma[i], noise)?;
        series.push(s.with_values(add_noise(s.values(), omega2[i], noise.kind, &mut noise_rng)?)?);
    }
    Ok(SimulatedRep {
        panel: Panel::new(series)?,
        integrated: latent.integrated,
        noise_variances: omega2,
    })
}

/// Univariate Brownian path `σW` on `n + 1` equidistant points plus iid
/// Gaussian noise of variance `noise_var`.
pub fn constant_vol_series<R: Rng>(n: usize, sigma: f64, noise_var: f64, rng: &mut R) -> Result<TickSeries> {
    if n < 2 || !(sigma >= 0.0) || !(noise_var >= 0.0) {
        return Err(HyError::Domain(format!(
            "constant volatility path needs n >= 2, sigma >= 0, noise >= 0 (got {n}, {sigma}, {noise_var})"
        )));
    }
    let step = sigma / (n as f64).sqrt();
    let noise = noise_var.sqrt();
    let mut x = 0.0;
    let mut values = Vec::with_capacity(n + 1);
    for j in 0..=n {
        if j > 0 {
            x += step * rng.sample::<f64, _>(StandardNormal);
        }
        values.push(x + noise * rng.sample::<f64, _>(StandardNormal));
    }
    TickSeries::new("y", (0..=n).map(|j| j as f64 / n as f64).collect(), values)
}

/// Everything a calibration table is tied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationKey {
    pub scheme: SamplingScheme,
    pub n_grid: usize,
    pub theta: f64,
    pub kernel: String,
    pub kn_rule: KnRule,
}

impl CalibrationKey {
    /// Hex SHA-256 of the key's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("calibration key serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-entry divisors `R_kl / target_kl` estimated on Brownian data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub key: CalibrationKey,
    pub key_hash: String,
    #[serde(with = "serde_rows")]
    pub factors: Matrix,
    pub reps: usize,
    pub rho: f64,
    pub seed: u64,
}

impl CalibrationTable {
    /// Fails unless the table was built for exactly `key`.
    pub fn check_key(&self, key: &CalibrationKey) -> Result<()> {
        if self.key_hash != key.hash() || &self.key != key {
            return Err(HyError::Precondition(format!(
                "calibration table was built for {:?}, not {:?}",
                self.key, key
            )));
        }
        Ok(())
    }
}

/// Estimates calibration factors from `reps` correlated Brownian pairs
/// observed on the scheme's grids.
pub fn calibrate(key: &CalibrationKey, reps: usize, rho: f64, seed: u64) -> Result<CalibrationTable> {
    if reps < 100 {
        return Err(HyError::Domain(format!("calibration needs at least 100 repetitions, got {reps}")));
    }
    if !(rho.abs() <= 1.0) || rho == 0.0 {
        return Err(HyError::Domain(format!(
            "calibration correlation must lie in [-1, 1] and be non-zero, got {rho}"
        )));
    }
    key.scheme.validate(key.n_grid)?;
    let kernel = Kernel::by_name(&key.kernel)?;
    let n = key.n_grid;
    let sdt = (1.0 / n as f64).sqrt();
    let resid = (1.0 - rho * rho).sqrt();
    let estimates = (0..reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<Matrix> {
            let mut rng = stream_rng(seed, rep, Stream::Calibration);
            let mut b = [vec![0.0; n + 1], vec![0.0; n + 1]];
            for j in 0..n {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                b[0][j + 1] = b[0][j] + sdt * z1;
                b[1][j + 1] = b[1][j] + sdt * (rho * z1 + resid * z2);
            }
            let panel = apply_scheme(&b, &key.scheme, &mut stream_rng(seed, rep, Stream::Sampling))?;
            let k_n = window_size(panel.n_total(), key.theta, key.kn_rule);
            Ok(HyPanel::new(&panel, &kernel, k_n)?.estimate().raw_matrix)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = DMatrix::zeros(2, 2);
    for e in &estimates {
        mean += e;
    }
    mean /= reps as f64;
    let factors = DMatrix::from_fn(2, 2, |k, l| if k == l { mean[(k, l)] } else { mean[(k, l)] / rho });
    if factors.iter().any(|f| !(0.5..=1.5).contains(f)) {
        warn!("calibration factors {:?} lie outside [0.5, 1.5]", factors.as_slice());
    }
    Ok(CalibrationTable {
        key_hash: key.hash(),
        key: key.clone(),
        factors,
        reps,
        rho,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_loading_matches_normalisation() {
        let a = AssetParams::default();
        assert!((a.beta0 - a.beta1 * a.beta1 / (2.0 * a.alpha)).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_path() {
        let m = SvModelParams {
            n_grid: 500,
            ..Default::default()
        };
        let a = simulate_sv(&m, &mut stream_rng(5, 3, Stream::Latent)).unwrap();
        let b = simulate_sv(&m, &mut stream_rng(5, 3, Stream::Latent)).unwrap();
        let c = simulate_sv(&m, &mut stream_rng(5, 4, Stream::Latent)).unwrap();
        assert_eq!(a.x, b.x);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn zero_loading_gives_constant_volatility() {
        let mut m = SvModelParams {
            n_grid: 200,
            ..Default::default()
        };
        m.assets[0].beta1 = 0.0;
        let p = simulate_sv(&m, &mut stream_rng(1, 0, Stream::Latent)).unwrap();
        let s0 = (-5.0f64 / 16.0).exp();
        assert!(p.sigma[0].iter().all(|s| (*s - s0).abs() < 1e-15));
        assert!((p.integrated[(0, 0)] - s0 * s0).abs() < 1e-12);
    }

    #[test]
    fn scheme_counts() {
        let mut rng = stream_rng(0, 0, Stream::Sampling);
        let [a, b] = SamplingScheme::Subset { n1: 4680, n2: 2340 }.indices(23_400, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (4681, 2341));
        assert!(b.iter().all(|j| a.binary_search(j).is_ok()));
        let [a, b] = SamplingScheme::Shifted { n1: 4680 }.indices(23_400, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (4681, 4680));
        assert!(b.iter().all(|j| a.binary_search(j).is_err()));
        assert_eq!(b[0], 2);
        assert!(SamplingScheme::Subset { n1: 4680, n2: 2000 }.validate(23_400).is_err());
        assert!(SamplingScheme::Poisson { lambda1: 0.5, lambda2: 2.0 }.validate(100).is_err());
    }

    #[test]
    fn poisson_endpoints_and_monotonicity() {
        let mut rng = stream_rng(9, 0, Stream::Sampling);
        let [a, b] = SamplingScheme::Poisson { lambda1: 5.0, lambda2: 10.0 }
            .indices(23_400, &mut rng)
            .unwrap();
        for ix in [&a, &b] {
            assert_eq!(ix[0], 0);
            assert_eq!(*ix.last().unwrap(), 23_400);
            assert!(ix.windows(2).all(|w| w[1] > w[0]));
        }
        assert!((a.len() as f64 - 4680.0).abs() < 300.0);
        assert!((b.len() as f64 - 2340.0).abs() < 200.0);
    }

    #[test]
    fn ma1_preserves_marginal_variance() {
        for theta in [0.0, 0.3, -0.8, 2.0] {
            let (a0, a1) = ma1_coefficients(theta);
            assert!((a0 * a0 + a1 * a1 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn noise_variance_scales() {
        let sigma = vec![1.0; 101];
        let spec = NoiseSpec::default();
        assert!((noise_variance(&sigma, &spec).unwrap() - 0.25 / 100.0).abs() < 1e-15);
        let level = NoiseSpec {
            scale: NoiseScale::Level,
            ..spec
        };
        assert!((noise_variance(&sigma, &level).unwrap() - 0.25).abs() < 1e-15);
        let zero = NoiseSpec { ratio: 0.0, ..spec };
        let v = vec![1.0, 2.0, 3.0];
        let mut rng = stream_rng(0, 0, Stream::Noise);
        assert_eq!(add_noise(&v, noise_variance(&sigma, &zero).unwrap(), NoiseKind::Iid, &mut rng).unwrap(), v);
    }

    #[test]
    fn calibration_key_hash_is_stable_and_sensitive() {
        let key = CalibrationKey {
            scheme: SamplingScheme::Shifted { n1: 4680 },
            n_grid: 23_400,
            theta: 0.15,
            kernel: "triangle".into(),
            kn_rule: KnRule::Ceil,
        };
        let mut other = key.clone();
        other.theta = 0.2;
        assert_eq!(key.hash(), key.clone().hash());
        assert_ne!(key.hash(), other.hash());
        assert_eq!(key.hash().len(), 64);
    }
}
