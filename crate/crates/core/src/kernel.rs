//! Pre-averaging weight functions and the scalar/functional constants derived
//! from them.
//!
//! A [`Kernel`] bundles a weight `g` on `[0, 1]` (extended by zero outside),
//! its analytic derivative `g'`, and the list of interior points where either
//! is not smooth. All constants are obtained by quadrature that splits panels
//! at those points, so piecewise polynomial kernels are integrated exactly up
//! to rounding.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{HyError, Result};
use crate::quadrature::{self, normalize_breaks, GaussLegendre};

pub type WeightFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Selects the integrand pair of an overlap functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Overlap {
    /// `g(u) g(v)`
    GG,
    /// `g(u) g'(v)`
    GGp,
    /// `g'(u) g'(v)`
    GpGp,
}

impl Overlap {
    pub const ALL: [Overlap; 3] = [Overlap::GG, Overlap::GGp, Overlap::GpGp];
}

/// Resolution of the kernel quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSettings {
    /// Gauss–Legendre nodes per panel for the nested overlap integrals.
    pub nodes: usize,
    /// Absolute tolerance of every adaptive outer integral.
    pub abs_tol: f64,
    /// Panel budget of the adaptive integrator before it reports failure.
    pub max_panels: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            nodes: 8,
            abs_tol: 1e-10,
            max_panels: 4000,
        }
    }
}

impl QuadSettings {
    /// The same settings with twice the resolution, used for convergence checks.
    pub fn refined(&self) -> Self {
        Self {
            nodes: self.nodes * 2,
            abs_tol: self.abs_tol / 16.0,
            max_panels: self.max_panels * 2,
        }
    }
}

/// The three integrals of squared overlap functionals over `s ∈ [-2, 2]` at `x = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaConstants {
    pub kappa: f64,
    pub kappa_bar: f64,
    pub kappa_tilde: f64,
    /// Largest error estimate reported by the adaptive integrator.
    #[serde(skip)]
    pub max_error_estimate: f64,
}

impl KappaConstants {
    pub fn get(&self, which: Overlap) -> f64 {
        match which {
            Overlap::GG => self.kappa,
            Overlap::GGp => self.kappa_bar,
            Overlap::GpGp => self.kappa_tilde,
        }
    }
}

/// Everything the command line reports about a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub psi: f64,
    pub mu: f64,
    pub mu_tilde: f64,
    pub kappa: f64,
    pub kappa_bar: f64,
    pub kappa_tilde: f64,
}

#[derive(Clone)]
pub struct Kernel {
    name: String,
    g: WeightFn,
    g_prime: WeightFn,
    kinks: Vec<f64>,
    psi: f64,
    mu: f64,
    mu_tilde: f64,
    quad: QuadSettings,
    rule: GaussLegendre,
    kappas: OnceLock<KappaConstants>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("kinks", &self.kinks)
            .field("psi", &self.psi)
            .field("mu", &self.mu)
            .field("mu_tilde", &self.mu_tilde)
            .field("quad", &self.quad)
            .finish()
    }
}

/// Names accepted by [`Kernel::by_name`].
pub const KERNEL_NAMES: [&str; 3] = ["triangle", "sine", "parabola"];

impl Kernel {
    /// Builds a kernel from a weight, its analytic derivative and the interior
    /// points in `(0, 1)` where either fails to be smooth.
    pub fn new(
        name: impl Into<String>,
        g: WeightFn,
        g_prime: WeightFn,
        kinks: Vec<f64>,
        quad: QuadSettings,
    ) -> Result<Self> {
        let name = name.into();
        let boundary_tol = 1e-12;
        for end in [0.0, 1.0] {
            let v = g(end);
            if !v.is_finite() || v.abs() > boundary_tol {
                return Err(HyError::validation(
                    &name,
                    None,
                    format!("weight function must vanish at {end}, got g({end}) = {v}"),
                ));
            }
        }
        if quad.nodes == 0 {
            return Err(HyError::Domain("quadrature needs at least one node".into()));
        }
        let mut kinks = kinks;
        normalize_breaks(0.0, 1.0, &mut kinks);

        let clipped_g = {
            let g = g.clone();
            move |x: f64| if (0.0..=1.0).contains(&x) { g(x) } else { 0.0 }
        };
        let clipped_gp = {
            let gp = g_prime.clone();
            move |x: f64| if x > 0.0 && x < 1.0 { gp(x) } else { 0.0 }
        };
        let integ = |f: &dyn Fn(f64) -> f64| {
            quadrature::adaptive(f, 0.0, 1.0, &kinks, quad.abs_tol, quad.max_panels).map(|o| o.value)
        };
        let psi = integ(&clipped_g)?;
        let mu = integ(&|x| clipped_g(x).powi(2))?;
        let mu_tilde = integ(&|x| clipped_gp(x).powi(2))?;
        if !(psi > 0.0) || !(mu > 0.0) {
            return Err(HyError::validation(
                &name,
                None,
                format!("weight function needs positive integral and square integral (psi = {psi}, mu = {mu})"),
            ));
        }
        Ok(Self {
            name,
            g,
            g_prime,
            kinks,
            psi,
            mu,
            mu_tilde,
            rule: GaussLegendre::new(quad.nodes),
            quad,
            kappas: OnceLock::new(),
        })
    }

    /// `g(x) = min(x, 1 - x)`.
    pub fn triangle() -> Self {
        Self::triangle_with(QuadSettings::default())
    }

    pub fn triangle_with(quad: QuadSettings) -> Self {
        Self::new(
            "triangle",
            Arc::new(|x: f64| x.min(1.0 - x)),
            Arc::new(|x: f64| if x < 0.5 { 1.0 } else { -1.0 }),
            vec![0.5],
            quad,
        )
        .expect("triangle kernel is admissible")
    }

    /// Looks up one of the built-in kernels listed in [`KERNEL_NAMES`].
    pub fn by_name(name: &str) -> Result<Self> {
        Self::by_name_with(name, QuadSettings::default())
    }

    pub fn by_name_with(name: &str, quad: QuadSettings) -> Result<Self> {
        use std::f64::consts::PI;
        match name {
            "triangle" => Ok(Self::triangle_with(quad)),
            "sine" => Self::new(
                "sine",
                Arc::new(|x: f64| (PI * x).sin()),
                Arc::new(|x: f64| PI * (PI * x).cos()),
                vec![],
                quad,
            ),
            "parabola" => Self::new(
                "parabola",
                Arc::new(|x: f64| x * (1.0 - x)),
                Arc::new(|x: f64| 1.0 - 2.0 * x),
                vec![],
                quad,
            ),
            other => Err(HyError::Domain(format!(
                "unknown kernel '{other}' (available: {})",
                KERNEL_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn quad_settings(&self) -> QuadSettings {
        self.quad
    }

    /// Weight function, zero outside `[0, 1]`.
    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        if (0.0..=1.0).contains(&x) {
            (self.g)(x)
        } else {
            0.0
        }
    }

    /// Derivative of the weight, zero outside `(0, 1)`.
    #[inline]
    pub fn g_prime(&self, x: f64) -> f64 {
        if x > 0.0 && x < 1.0 {
            (self.g_prime)(x)
        } else {
            0.0
        }
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mu_tilde(&self) -> f64 {
        self.mu_tilde
    }

    /// `{0, kinks..., 1}`: the points where the integrands may change form.
    pub fn support_breaks(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.kinks.len() + 2);
        b.push(0.0);
        b.extend_from_slice(&self.kinks);
        b.push(1.0);
        b
    }

    /// Values of `s` at which `s ↦ ψ(s, x)` may fail to be smooth.
    pub fn overlap_breaks(&self, x: f64) -> Vec<f64> {
        let b = self.support_breaks();
        let mut out = Vec::with_capacity(2 * b.len() * b.len());
        for &bu in &b {
            for &bv in &b {
                out.push(bv / x + 1.0 - bu);
                out.push((bv - 1.0) / x - bu);
            }
        }
        out
    }

    /// Half-width of the support of `s ↦ ψ(s, x)`.
    pub fn overlap_support(x: f64) -> f64 {
        1.0 + 1.0 / x
    }

    /// The overlap functional
    /// `∫₀¹ ∫_{(u-1+s)x}^{1+x(s+u)} A(u) B(v) dv du`
    /// with `(A, B)` chosen by `which`.
    pub fn psi_overlap(&self, s: f64, x: f64, which: Overlap) -> Result<f64> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(HyError::Domain(format!("overlap functional needs x > 0, got {x}")));
        }
        if !s.is_finite() {
            return Err(HyError::Domain(format!("overlap functional needs finite s, got {s}")));
        }
        Ok(self.psi_overlap_unchecked(s, x, which))
    }

    pub(crate) fn psi_overlap_unchecked(&self, s: f64, x: f64, which: Overlap) -> f64 {
        let reach = Self::overlap_support(x);
        if s >= reach || s <= -reach {
            return 0.0;
        }
        let outer_is_deriv = matches!(which, Overlap::GpGp);
        let inner_is_deriv = !matches!(which, Overlap::GG);

        let mut ubreaks = Vec::with_capacity(2 * self.kinks.len() + 6);
        ubreaks.extend_from_slice(&self.kinks);
        for b in self.support_breaks() {
            ubreaks.push(b / x + 1.0 - s);
            ubreaks.push((b - 1.0) / x - s);
        }
        normalize_breaks(0.0, 1.0, &mut ubreaks);

        let inner = |u: f64| -> f64 {
            let lo = ((u - 1.0 + s) * x).max(0.0);
            let hi = (1.0 + x * (s + u)).min(1.0);
            if hi <= lo {
                return 0.0;
            }
            if inner_is_deriv {
                self.rule.integrate_panels(lo, hi, &self.kinks, |v| self.g_prime(v))
            } else {
                self.rule.integrate_panels(lo, hi, &self.kinks, |v| self.g(v))
            }
        };
        self.rule.integrate_panels(0.0, 1.0, &ubreaks, |u| {
            let a = if outer_is_deriv { self.g_prime(u) } else { self.g(u) };
            if a == 0.0 {
                0.0
            } else {
                a * inner(u)
            }
        })
    }

    /// `κ`, `κ̄`, `κ̃`: integrals over `s ∈ [-2, 2]` of the squared overlap
    /// functionals at `x = 1`. Computed once and cached.
    pub fn kappa_constants(&self) -> Result<KappaConstants> {
        if let Some(k) = self.kappas.get() {
            return Ok(*k);
        }
        let breaks = self.overlap_breaks(1.0);
        let mut vals = [0.0; 3];
        let mut max_err: f64 = 0.0;
        for (slot, which) in vals.iter_mut().zip(Overlap::ALL) {
            let out = quadrature::adaptive(
                |s| self.psi_overlap_unchecked(s, 1.0, which).powi(2),
                -2.0,
                2.0,
                &breaks,
                self.quad.abs_tol,
                self.quad.max_panels,
            )
            .map_err(|e| HyError::Numerical(format!("kernel '{}', {:?} constant: {e}", self.name, which)))?;
            *slot = out.value;
            max_err = max_err.max(out.error_estimate);
        }
        let k = KappaConstants {
            kappa: vals[0],
            kappa_bar: vals[1],
            kappa_tilde: vals[2],
            max_error_estimate: max_err,
        };
        Ok(*self.kappas.get_or_init(|| k))
    }

    pub fn constants(&self) -> Result<KernelConstants> {
        let k = self.kappa_constants()?;
        Ok(KernelConstants {
            psi: self.psi,
            mu: self.mu,
            mu_tilde: self.mu_tilde,
            kappa: k.kappa,
            kappa_bar: k.kappa_bar,
            kappa_tilde: k.kappa_tilde,
        })
    }

    /// Weights `g(j / k_n)` for `j = 1, …, k_n - 1`.
    pub fn discrete_weights(&self, k_n: usize) -> Vec<f64> {
        (1..k_n).map(|j| self.g(j as f64 / k_n as f64)).collect()
    }

    /// Window-level counterparts of `(μ, μ̃)`: `k⁻¹ Σ g(j/k)²` and
    /// `k Σ (g((j+1)/k) − g(j/k))²`. Both converge to the integrals as `k → ∞`.
    pub fn discrete_mu(&self, k_n: usize) -> (f64, f64) {
        let k = k_n as f64;
        let g: Vec<f64> = (0..=k_n).map(|j| self.g(j as f64 / k)).collect();
        let mu = g.iter().map(|v| v * v).sum::<f64>() / k;
        let mu_tilde = g.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() * k;
        (mu, mu_tilde)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn triangle_scalars() {
        let k = Kernel::triangle();
        assert_relative_eq!(k.psi(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(k.mu(), 1.0 / 12.0, epsilon = 1e-14);
        assert_relative_eq!(k.mu_tilde(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn discrete_mu_by_parity() {
        let k = Kernel::triangle();
        let (mu, mt) = k.discrete_mu(16);
        assert_relative_eq!(mt, 1.0, epsilon = 1e-14);
        assert_relative_eq!(mu, 344.0 / 4096.0, epsilon = 1e-14);
        // odd windows put a zero weight on the middle increment
        assert_relative_eq!(k.discrete_mu(15).1, 14.0 / 15.0, epsilon = 1e-14);
        let (mu, mt) = k.discrete_mu(4000);
        assert_relative_eq!(mu, k.mu(), max_relative = 1e-5);
        assert_relative_eq!(mt, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sine_and_parabola_scalars() {
        let s = Kernel::by_name("sine").unwrap();
        assert_relative_eq!(s.psi(), 2.0 / PI, epsilon = 1e-10);
        assert_relative_eq!(s.mu(), 0.5, epsilon = 1e-10);
        assert_relative_eq!(s.mu_tilde(), PI * PI / 2.0, epsilon = 1e-9);
        let p = Kernel::by_name("parabola").unwrap();
        assert_relative_eq!(p.psi(), 1.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(p.mu(), 1.0 / 30.0, epsilon = 1e-14);
        assert_relative_eq!(p.mu_tilde(), 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_weight_not_vanishing_at_boundary() {
        let err = Kernel::new(
            "bad",
            Arc::new(|x: f64| 1.0 + x),
            Arc::new(|_| 1.0),
            vec![],
            QuadSettings::default(),
        )
        .unwrap_err();
        assert!(err.is_data_error());
        assert!(Kernel::by_name("nope").is_err());
    }

    #[test]
    fn overlap_vanishes_outside_support() {
        let k = Kernel::triangle();
        for which in Overlap::ALL {
            assert_eq!(k.psi_overlap(2.0, 1.0, which).unwrap(), 0.0);
            assert_eq!(k.psi_overlap(-2.0, 1.0, which).unwrap(), 0.0);
            assert_eq!(k.psi_overlap(2.7, 1.0, which).unwrap(), 0.0);
        }
        assert!(k.psi_overlap(0.0, 0.0, Overlap::GG).is_err());
        assert!(k.psi_overlap(0.0, -1.0, Overlap::GG).is_err());
    }

    #[test]
    fn overlap_at_origin_is_full_product() {
        // at s = 0, x = 1 the inner range covers all of [0, 1]
        let k = Kernel::triangle();
        assert_relative_eq!(k.psi_overlap(0.0, 1.0, Overlap::GG).unwrap(), 1.0 / 16.0, epsilon = 1e-15);
        assert!(k.psi_overlap(0.0, 1.0, Overlap::GGp).unwrap().abs() < 1e-15);
    }

    #[test]
    fn triangle_kappas_match_rationals() {
        let k = Kernel::triangle().kappa_constants().unwrap();
        assert_relative_eq!(k.kappa, 7585.0 / 1_161_216.0, max_relative = 1e-9);
        assert_relative_eq!(k.kappa_bar, 151.0 / 20160.0, max_relative = 1e-9);
        assert_relative_eq!(k.kappa_tilde, 1.0 / 24.0, max_relative = 1e-9);
    }

    #[test]
    fn refinement_is_stable() {
        for name in KERNEL_NAMES {
            let base = Kernel::by_name(name).unwrap();
            let fine = Kernel::by_name_with(name, base.quad_settings().refined()).unwrap();
            let a = base.constants().unwrap();
            let b = fine.constants().unwrap();
            for (x, y) in [
                (a.psi, b.psi),
                (a.mu, b.mu),
                (a.mu_tilde, b.mu_tilde),
                (a.kappa, b.kappa),
                (a.kappa_bar, b.kappa_bar),
                (a.kappa_tilde, b.kappa_tilde),
            ] {
                assert!((x - y).abs() < 1e-8, "{name}: {x} vs {y}");
            }
        }
    }
}
