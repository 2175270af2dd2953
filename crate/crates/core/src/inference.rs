//! Feasible central limit theory: vectorisation, standardisation,
//! confidence intervals and the parametric variance of the univariate model.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{HyError, Result};
use crate::kernel::Kernel;
use crate::matrix::Matrix;
use crate::variance::VarianceTensor;

/// Eigenvalues below this are floored when whitening.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Column-stacks a square matrix.
pub fn vec_stack(m: &Matrix) -> Result<DVector<f64>> {
    if !m.is_square() {
        return Err(HyError::Domain(format!("vec_stack needs a square matrix, got {:?}", m.shape())));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// Inverse of [`vec_stack`].
pub fn vec_unstack(v: &DVector<f64>) -> Result<Matrix> {
    let d = (v.len() as f64).sqrt().round() as usize;
    if d * d != v.len() {
        return Err(HyError::Domain(format!("length {} is not a perfect square", v.len())));
    }
    Ok(DMatrix::from_column_slice(d, d, v.as_slice()))
}

/// `n^{1/4} V̂^{-1/2} (vec(HY) - vec(target))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizedStats {
    pub values: Vec<f64>,
    pub sqrt_method: String,
    /// Largest over smallest eigenvalue of the symmetrised vec view, after flooring.
    pub condition_number: f64,
    /// Number of eigenvalues raised to the floor.
    pub floored: usize,
}

/// Whitens the estimation error with the vec view of `v`.
///
/// The view is symmetrised and eigen-decomposed. Eigenvalues below
/// [`EIGEN_FLOOR`] are raised to it with a warning unless they are clearly
/// negative, in which case the matrix is rejected.
pub fn standardize(hy: &Matrix, target: &Matrix, v: &VarianceTensor, n: usize) -> Result<StandardizedStats> {
    let d = hy.nrows();
    if target.shape() != hy.shape() || v.dim() != d {
        return Err(HyError::Domain(format!(
            "shape mismatch: estimate {:?}, target {:?}, variance dimension {}",
            hy.shape(),
            target.shape(),
            v.dim()
        )));
    }
    let vm = v.vec_matrix();
    let sym = (&vm + vm.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(EIGEN_FLOOR);
    let bad: Vec<f64> = eig
        .eigenvalues
        .iter()
        .copied()
        .filter(|&e| e < -1e-8 * scale || !e.is_finite())
        .collect();
    if !bad.is_empty() {
        return Err(HyError::Numerical(format!(
            "variance matrix is not positive definite; offending eigenvalues {bad:?}"
        )));
    }
    let mut floored = 0;
    let lambdas: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&e| {
            if e < EIGEN_FLOOR {
                floored += 1;
                EIGEN_FLOOR
            } else {
                e
            }
        })
        .collect();
    if floored > 0 {
        warn!("{floored} eigenvalue(s) of the variance matrix floored at {EIGEN_FLOOR:e}");
    }
    let inv_sqrt = DVector::from_iterator(lambdas.len(), lambdas.iter().map(|e| 1.0 / e.sqrt()));
    let q = &eig.eigenvectors;
    let w = q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose();
    let err = vec_stack(&(hy - target))?;
    let z = w * err * (n as f64).powf(0.25);
    let (lo, hi) = lambdas.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    Ok(StandardizedStats {
        values: z.iter().copied().collect(),
        sqrt_method: "symmetric-eigen".into(),
        condition_number: hi / lo,
        floored,
    })
}

/// Scalar standardisation `n^{1/4}(HY_kl - target) / √V_{kl,kl}`.
pub fn standardize_entry(hy: f64, target: f64, variance: f64, n: usize) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(HyError::Numerical(format!("variance {variance} is not positive")));
    }
    Ok((n as f64).powf(0.25) * (hy - target) / variance.sqrt())
}

/// Two-sided interval for one entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub k: usize,
    pub l: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// Entrywise intervals, with the entries refused for lack of a usable variance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub level: f64,
    pub intervals: Vec<Interval>,
    pub refused: Vec<(usize, usize)>,
}

impl ConfidenceRegion {
    pub fn get(&self, k: usize, l: usize) -> Option<&Interval> {
        self.intervals.iter().find(|i| i.k == k && i.l == l)
    }
}

/// `HY_kl ± z_{(1+level)/2} √V_{kl,kl} n^{-1/4}` for every entry.
pub fn confidence_region(hy: &Matrix, v: &VarianceTensor, n: usize, level: f64) -> Result<ConfidenceRegion> {
    if !(0.0..1.0).contains(&level) {
        return Err(HyError::Domain(format!("confidence level must lie in [0, 1), got {level}")));
    }
    let d = hy.nrows();
    if v.dim() != d {
        return Err(HyError::Domain(format!("variance dimension {} for a {d}×{d} estimate", v.dim())));
    }
    let z = two_sided_z(level);
    let rate = (n as f64).powf(-0.25);
    let mut intervals = Vec::new();
    let mut refused = Vec::new();
    for k in 0..d {
        for l in 0..d {
            let var = v.diagonal(k, l);
            if v.is_flagged(k, l) || !(var >= 0.0) {
                refused.push((k, l));
                continue;
            }
            let h = z * var.sqrt() * rate;
            intervals.push(Interval {
                k,
                l,
                lower: hy[(k, l)] - h,
                upper: hy[(k, l)] + h,
            });
        }
    }
    Ok(ConfidenceRegion {
        level,
        intervals,
        refused,
    })
}

/// Joint region `{x : |n^{1/4} V̂^{-1/2}(vec HY - x)|² ≤ χ²_{d², level}}`;
/// returns the radius and whether `candidate` lies inside.
pub fn joint_region_contains(
    hy: &Matrix,
    v: &VarianceTensor,
    n: usize,
    level: f64,
    candidate: &Matrix,
) -> Result<(f64, bool)> {
    if !(0.0..1.0).contains(&level) {
        return Err(HyError::Domain(format!("confidence level must lie in [0, 1), got {level}")));
    }
    let dd = (hy.nrows() * hy.nrows()) as f64;
    let chi = ChiSquared::new(dd).map_err(|e| HyError::Numerical(e.to_string()))?;
    let radius = chi.inverse_cdf(level);
    let z = standardize(hy, candidate, v, n)?;
    let norm2: f64 = z.values.iter().map(|x| x * x).sum();
    Ok((radius, norm2 <= radius))
}

/// `z_{(1+level)/2}` of the standard normal law.
pub fn two_sided_z(level: f64) -> f64 {
    if level == 0.0 {
        return 0.0;
    }
    Normal::standard().inverse_cdf(0.5 * (1.0 + level))
}

/// `V = (2/ψ⁴)(θκσ⁴ + 2θ⁻¹Ψκ̄σ² + θ⁻³Ψ²κ̃)`: constant volatility,
/// equidistant sampling.
pub fn parametric_variance(theta: f64, sigma: f64, noise: f64, kernel: &Kernel) -> Result<f64> {
    if !(theta > 0.0 && sigma > 0.0 && noise >= 0.0) {
        return Err(HyError::Domain(format!(
            "parametric variance needs theta, sigma > 0 and Psi >= 0 (got {theta}, {sigma}, {noise})"
        )));
    }
    let c = kernel.constants()?;
    let s2 = sigma * sigma;
    Ok(2.0 / c.psi.powi(4)
        * (theta * c.kappa * s2 * s2 + 2.0 / theta * noise * c.kappa_bar * s2 + noise * noise / theta.powi(3) * c.kappa_tilde))
}

/// `argmin_θ` of [`parametric_variance`] by golden-section search.
pub fn optimal_theta(sigma: f64, noise: f64, kernel: &Kernel) -> Result<f64> {
    if !(noise > 0.0) {
        return Err(HyError::Domain("optimal theta needs Psi > 0; without noise V grows with theta".into()));
    }
    if !(sigma > 0.0) {
        return Err(HyError::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let f = |t: f64| parametric_variance(t, sigma, noise, kernel);
    // bracket around the natural scale √Ψ/σ
    let scale = noise.sqrt() / sigma;
    let (mut a, mut b) = (1e-3 * scale, 1e3 * scale);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a) > 1e-9 * (c.abs() + d.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}
