//! One-dimensional quadrature rules used by the kernel functionals.
//!
//! Two flavours are provided:
//!
//! * [`GaussLegendre`]: a fixed `n`-point rule applied panel by panel over a
//!   caller-supplied list of breakpoints. With breakpoints at every kink of a
//!   piecewise polynomial integrand this is exact up to rounding.
//! * [`adaptive`]: a globally adaptive Gauss–Kronrod (7/15) scheme that keeps
//!   bisecting the panel with the largest error estimate until the total
//!   estimate drops below the absolute tolerance.

use crate::error::{HyError, Result};

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the rule by Newton iteration on the Legendre polynomial `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi's initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]` with a single application of the rule.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        if b <= a {
            return 0.0;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Integrates over `[a, b]`, applying the rule separately on each panel
    /// delimited by the sorted, clipped `breaks`.
    pub fn integrate_panels<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, breaks: &[f64], mut f: F) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut lo = a;
        for &c in breaks {
            if c > lo && c < b {
                acc += self.integrate(lo, c, &mut f);
                lo = c;
            }
        }
        acc + self.integrate(lo, b, &mut f)
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Sorts, deduplicates and clips a breakpoint list to the open interval `(a, b)`.
pub fn normalize_breaks(a: f64, b: f64, breaks: &mut Vec<f64>) {
    breaks.retain(|c| c.is_finite() && *c > a && *c < b);
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
}

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15), digits as tabulated.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: FnMut(f64) -> f64>(a: f64, b: f64, f: &mut F) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        resk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    (resk * half, ((resk - resg) * half).abs())
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadOutcome {
    pub value: f64,
    pub error_estimate: f64,
    pub panels: usize,
}

/// Globally adaptive Gauss–Kronrod integration over `[a, b]`.
///
/// `breaks` seeds the initial panel partition (kinks of the integrand).
/// Fails with [`HyError::Numerical`] when `max_panels` is exhausted before
/// the error estimate falls below `abs_tol`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    max_panels: usize,
) -> Result<QuadOutcome> {
    if b <= a {
        return Ok(QuadOutcome {
            value: 0.0,
            error_estimate: 0.0,
            panels: 0,
        });
    }
    let mut cuts: Vec<f64> = breaks.to_vec();
    normalize_breaks(a, b, &mut cuts);
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(cuts.len() + 1);
    let mut lo = a;
    for c in cuts.into_iter().chain(std::iter::once(b)) {
        let (v, e) = gk15(lo, c, &mut f);
        panels.push((lo, c, v, e));
        lo = c;
    }
    loop {
        let total_err: f64 = panels.iter().map(|p| p.3).sum();
        if total_err <= abs_tol {
            break;
        }
        if panels.len() >= max_panels {
            let value: f64 = panels.iter().map(|p| p.2).sum();
            return Err(HyError::Numerical(format!(
                "adaptive quadrature on [{a}, {b}] did not converge: estimate {value:e}, \
                 error {total_err:e} > tolerance {abs_tol:e} after {} panels",
                panels.len()
            )));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (p_lo, p_hi, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (p_lo + p_hi);
        if mid <= p_lo || mid >= p_hi {
            // interval collapsed to machine resolution; accept what we have
            let (v, _) = gk15(p_lo, p_hi, &mut f);
            panels.push((p_lo, p_hi, v, 0.0));
            continue;
        }
        let (v1, e1) = gk15(p_lo, mid, &mut f);
        let (v2, e2) = gk15(mid, p_hi, &mut f);
        panels.push((p_lo, mid, v1, e1));
        panels.push((mid, p_hi, v2, e2));
    }
    // sum in positional order so the result does not depend on refinement history
    panels.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    Ok(QuadOutcome {
        value: panels.iter().map(|p| p.2).sum(),
        error_estimate: panels.iter().map(|p| p.3).sum(),
        panels: panels.len(),
    })
}
