//! The pre-averaged Hayashi–Yoshida estimator.
//!
//! For assets `k`, `l` the estimator sums `Ȳ^k_{t_i} Ȳ^l_{t_j}` over every
//! pair of windows whose spans `(t_i, t_{i+k_n}]` intersect, scaled by
//! `1/(ψ k_n)²`. The last window of each asset, `i = n_k - k_n + 1`, has no
//! observation `t_{i+k_n}`; its span is closed at `t_{n_k}`.
//!
//! Window starts and ends are both non-decreasing in `i`, so the set of
//! `l`-windows overlapping a given `k`-window is a contiguous index range
//! whose bounds only move forward. [`HyPanel`] exploits this with a
//! two-pointer sweep; [`hy_naive_oracle`] is the quadratic reference.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HyError, Result};
use crate::grids::Panel;
use crate::kernel::Kernel;
use crate::matrix::{serde_rows, serde_rows_opt, Matrix};
use crate::preavg::preaverage_values;

/// The `d × d` estimate with the tuning that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovEstimate {
    /// Reported estimate (calibrated when factors were applied).
    #[serde(with = "serde_rows")]
    pub matrix: Matrix,
    /// Estimate before any calibration.
    #[serde(with = "serde_rows")]
    pub raw_matrix: Matrix,
    pub k_n: usize,
    pub theta: Option<f64>,
    pub n_total: usize,
    /// Per-entry divisors applied to `raw_matrix`.
    #[serde(with = "serde_rows_opt", default)]
    pub calibration: Option<Matrix>,
    /// `[k][l]`: number of overlapping window pairs.
    pub overlap_counts: Vec<Vec<usize>>,
}

impl CovEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Divides each entry by its calibration factor.
    pub fn apply_calibration(&mut self, factors: &Matrix) -> Result<()> {
        if factors.shape() != self.raw_matrix.shape() {
            return Err(HyError::Domain(format!(
                "calibration is {:?} but estimate is {:?}",
                factors.shape(),
                self.raw_matrix.shape()
            )));
        }
        if factors.iter().any(|f| !f.is_finite() || *f == 0.0) {
            return Err(HyError::Domain("calibration factors must be finite and non-zero".into()));
        }
        self.matrix = self.raw_matrix.component_div(factors);
        self.calibration = Some(factors.clone());
        Ok(())
    }
}

/// Pre-averaged windows of every asset, ready for repeated HY evaluations
/// (full, block-restricted, or truncated at `t`).
#[derive(Debug, Clone)]
pub struct HyPanel {
    k_n: usize,
    scale: f64,
    n_total: usize,
    times: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    starts: Vec<Vec<f64>>,
    ends: Vec<Vec<f64>>,
}

impl HyPanel {
    pub fn new(panel: &Panel, kernel: &Kernel, k_n: usize) -> Result<Self> {
        let mut pre = Vec::with_capacity(panel.dim());
        let mut starts = Vec::with_capacity(panel.dim());
        let mut ends = Vec::with_capacity(panel.dim());
        for s in panel.series() {
            let values = preaverage_values(s.values(), k_n, kernel)
                .map_err(|r| HyError::Precondition(format!("asset {}: {r}", s.name())))?;
            let t = s.times();
            let n_k = s.n_intervals();
            starts.push(t[..values.len()].to_vec());
            ends.push((0..values.len()).map(|i| t[(i + k_n).min(n_k)]).collect());
            pre.push(values);
        }
        let psi = kernel.psi();
        Ok(Self {
            k_n,
            scale: 1.0 / (psi * k_n as f64).powi(2),
            n_total: panel.n_total(),
            times: panel.series().iter().map(|s| s.times().to_vec()).collect(),
            pre,
            starts,
            ends,
        })
    }

    pub fn dim(&self) -> usize {
        self.pre.len()
    }

    pub fn k_n(&self) -> usize {
        self.k_n
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// `1 / (ψ k_n)²`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn preaveraged(&self, k: usize) -> &[f64] {
        &self.pre[k]
    }

    /// Window start times `t_i^k` for every admissible `i`.
    pub fn window_starts(&self, k: usize) -> &[f64] {
        &self.starts[k]
    }

    /// Sweeps `k`-windows `i ∈ i_range` against `l`-windows `j < j_limit`,
    /// calling `visit(i, Ȳ^k_i · Σ_j Ȳ^l_j, overlap count)` per window.
    fn sweep<F: FnMut(usize, f64, usize)>(
        &self,
        k: usize,
        l: usize,
        i_range: std::ops::Range<usize>,
        j_limit: usize,
        mut visit: F,
    ) {
        let (sk, ek, yk) = (&self.starts[k], &self.ends[k], &self.pre[k]);
        let (sl, el, yl) = (&self.starts[l], &self.ends[l], &self.pre[l]);
        let j_limit = j_limit.min(yl.len());
        let mut lo = 0;
        let mut hi = 0;
        for i in i_range {
            // first j whose span ends strictly after this window starts
            while lo < j_limit && el[lo] <= sk[i] {
                lo += 1;
            }
            // first j whose span starts at or after this window ends
            if hi < lo {
                hi = lo;
            }
            while hi < j_limit && sl[hi] < ek[i] {
                hi += 1;
            }
            if hi > lo {
                let s: f64 = yl[lo..hi].iter().sum();
                visit(i, yk[i] * s, hi - lo);
            } else {
                visit(i, 0.0, 0);
            }
        }
    }

    /// Scaled per-window contributions `Ȳ^k_i Σ_j Ȳ^l_j / (ψ k_n)²`.
    pub fn row_contributions(&self, k: usize, l: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.pre[k].len()];
        self.sweep(k, l, 0..self.pre[k].len(), usize::MAX, |i, v, _| out[i] = v * self.scale);
        out
    }

    /// Unrestricted `(k, l)` entry with its overlap count.
    pub fn pair(&self, k: usize, l: usize) -> (f64, usize) {
        let mut acc = 0.0;
        let mut count = 0;
        self.sweep(k, l, 0..self.pre[k].len(), usize::MAX, |_, v, c| {
            acc += v;
            count += c;
        });
        (acc * self.scale, count)
    }

    /// Full estimate `HY^n`.
    pub fn estimate(&self) -> CovEstimate {
        let d = self.dim();
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|k| (k..d).map(move |l| (k, l))).collect();
        let values: Vec<(f64, usize)> = pairs.par_iter().map(|&(k, l)| self.pair(k, l)).collect();
        let mut m = DMatrix::zeros(d, d);
        let mut counts = vec![vec![0; d]; d];
        for (&(k, l), &(v, c)) in pairs.iter().zip(&values) {
            m[(k, l)] = v;
            m[(l, k)] = v;
            counts[k][l] = c;
            counts[l][k] = c;
        }
        CovEstimate {
            raw_matrix: m.clone(),
            matrix: m,
            k_n: self.k_n,
            theta: None,
            n_total: self.n_total,
            calibration: None,
            overlap_counts: counts,
        }
    }

    /// Restriction of the `(k, l)` sum to windows with `t_i^k ∈ [a, b)`.
    pub fn block(&self, k: usize, l: usize, a: f64, b: f64) -> f64 {
        let s = &self.starts[k];
        let lo = s.partition_point(|&t| t < a);
        let hi = s.partition_point(|&t| t < b);
        if hi <= lo {
            return 0.0;
        }
        let mut acc = 0.0;
        self.sweep(k, l, lo..hi, usize::MAX, |_, v, _| acc += v);
        acc * self.scale
    }

    /// Number of windows `i` with `i + k_n <= n_k` and `t_{i+k_n} <= t`.
    pub fn windows_completed_by(&self, k: usize, t: f64) -> usize {
        let tk = &self.times[k];
        if tk.len() <= self.k_n {
            return 0;
        }
        tk[self.k_n..].partition_point(|&x| x <= t)
    }

    /// Truncated `(k, l)` sum over windows completed by `t`, with the number
    /// of overlapping pairs it contains.
    pub fn partial_pair(&self, k: usize, l: usize, t: f64) -> (f64, usize) {
        let ik = self.windows_completed_by(k, t);
        let jl = self.windows_completed_by(l, t);
        let mut acc = 0.0;
        let mut count = 0;
        self.sweep(k, l, 0..ik, jl, |_, v, c| {
            acc += v;
            count += c;
        });
        (acc * self.scale, count)
    }

    /// `HY^n([0, t])`.
    pub fn partial(&self, t: f64) -> Matrix {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for k in 0..d {
            for l in k..d {
                let v = self.partial_pair(k, l, t).0;
                m[(k, l)] = v;
                m[(l, k)] = v;
            }
        }
        m
    }

    /// Precomputes overlap ranges and prefix sums for `(k, l)` so that
    /// truncated sums can be evaluated repeatedly in `O(k_n)` each.
    pub fn pair_index(&self, k: usize, l: usize) -> PairIndex<'_> {
        let n_i = self.pre[k].len();
        let mut lo = vec![0; n_i];
        let mut hi = vec![0; n_i];
        let mut rows = Vec::with_capacity(n_i + 1);
        rows.push(0.0);
        let mut acc = 0.0;
        self.sweep_ranges(k, l, |i, a, b, v| {
            lo[i] = a;
            hi[i] = b;
            acc += v;
            rows.push(acc);
        });
        let mut prefix_l = Vec::with_capacity(self.pre[l].len() + 1);
        prefix_l.push(0.0);
        let mut acc = 0.0;
        for y in &self.pre[l] {
            acc += y;
            prefix_l.push(acc);
        }
        PairIndex {
            panel: self,
            k,
            l,
            lo,
            hi,
            prefix_rows: rows,
            prefix_l,
        }
    }

    fn sweep_ranges<F: FnMut(usize, usize, usize, f64)>(&self, k: usize, l: usize, mut visit: F) {
        let (sk, ek, yk) = (&self.starts[k], &self.ends[k], &self.pre[k]);
        let (sl, el, yl) = (&self.starts[l], &self.ends[l], &self.pre[l]);
        let (mut lo, mut hi) = (0, 0);
        for i in 0..yk.len() {
            while lo < yl.len() && el[lo] <= sk[i] {
                lo += 1;
            }
            hi = hi.max(lo);
            while hi < yl.len() && sl[hi] < ek[i] {
                hi += 1;
            }
            let s: f64 = yl[lo..hi].iter().sum();
            visit(i, lo, hi, yk[i] * s);
        }
    }

    /// All pairs indexed for repeated truncation, e.g. spot volatility.
    pub fn partial_sums(&self) -> PartialSums<'_> {
        let d = self.dim();
        PartialSums {
            pairs: (0..d)
                .flat_map(|k| (k..d).map(move |l| (k, l)))
                .map(|(k, l)| self.pair_index(k, l))
                .collect(),
            dim: d,
        }
    }
}

/// Overlap ranges of one ordered asset pair with prefix sums.
#[derive(Debug, Clone)]
pub struct PairIndex<'a> {
    panel: &'a HyPanel,
    k: usize,
    l: usize,
    /// `[lo[i], hi[i])`: the `l`-windows overlapping `k`-window `i`.
    lo: Vec<usize>,
    hi: Vec<usize>,
    prefix_rows: Vec<f64>,
    prefix_l: Vec<f64>,
}

impl PairIndex<'_> {
    /// Scaled sum over `i < i_limit`, `j < j_limit`.
    pub fn truncated(&self, i_limit: usize, j_limit: usize) -> f64 {
        let i_limit = i_limit.min(self.lo.len());
        let j_limit = j_limit.min(self.prefix_l.len() - 1);
        // rows whose whole overlap range lies below j_limit are complete
        let full = self.hi[..i_limit].partition_point(|&h| h <= j_limit);
        let mut acc = self.prefix_rows[full];
        let yk = &self.panel.pre[self.k];
        for (&y, &lo) in yk[full..i_limit].iter().zip(&self.lo[full..i_limit]) {
            if lo >= j_limit {
                break;
            }
            acc += y * (self.prefix_l[j_limit] - self.prefix_l[lo]);
        }
        acc * self.panel.scale
    }

    /// `HY^n_{kl}([0, t])`.
    pub fn at(&self, t: f64) -> f64 {
        let p = self.panel;
        self.truncated(p.windows_completed_by(self.k, t), p.windows_completed_by(self.l, t))
    }

    /// Unrestricted scaled sum.
    pub fn total(&self) -> f64 {
        self.prefix_rows[self.lo.len()] * self.panel.scale
    }
}

/// Indexed upper-triangle pairs of a [`HyPanel`].
#[derive(Debug, Clone)]
pub struct PartialSums<'a> {
    pairs: Vec<PairIndex<'a>>,
    dim: usize,
}

impl PartialSums<'_> {
    /// `HY^n([0, t])`; zero for `t <= 0`.
    pub fn at(&self, t: f64) -> Matrix {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        for p in &self.pairs {
            let v = p.at(t);
            m[(p.k, p.l)] = v;
            m[(p.l, p.k)] = v;
        }
        m
    }
}

/// `HY^n` for a panel; `k_n` must not exceed any asset's interval count.
pub fn hy_matrix(panel: &Panel, kernel: &Kernel, k_n: usize) -> Result<CovEstimate> {
    check_window(panel, k_n)?;
    Ok(HyPanel::new(panel, kernel, k_n)?.estimate())
}

/// Block statistic: the `(k, l)` sum restricted to `t_i^k ∈ [a, b)`.
pub fn hy_block(panel: &Panel, kernel: &Kernel, k_n: usize, k: usize, l: usize, block: (f64, f64)) -> Result<f64> {
    check_window(panel, k_n)?;
    check_pair(panel, k, l)?;
    let (a, b) = block;
    if !(0.0 <= a && a < b && b <= 1.0) {
        return Err(HyError::Domain(format!("block [{a}, {b}) must satisfy 0 <= a < b <= 1")));
    }
    Ok(HyPanel::new(panel, kernel, k_n)?.block(k, l, a, b))
}

/// `HY^n([0, t])`.
pub fn hy_partial(panel: &Panel, kernel: &Kernel, k_n: usize, t: f64) -> Result<Matrix> {
    check_window(panel, k_n)?;
    if !(t > 0.0 && t <= 1.0) {
        return Err(HyError::Domain(format!("truncation time must lie in (0, 1], got {t}")));
    }
    Ok(HyPanel::new(panel, kernel, k_n)?.partial(t))
}

fn check_window(panel: &Panel, k_n: usize) -> Result<()> {
    let min = panel.min_intervals();
    if k_n < 2 || k_n > min {
        return Err(HyError::Precondition(format!(
            "window k_n = {k_n} must lie in [2, {min}] (smallest asset interval count)"
        )));
    }
    Ok(())
}

fn check_pair(panel: &Panel, k: usize, l: usize) -> Result<()> {
    let d = panel.dim();
    if k >= d || l >= d {
        return Err(HyError::Domain(format!("asset pair ({k}, {l}) out of range for d = {d}")));
    }
    Ok(())
}

/// Quadratic-time reference implementation of `HY^n`: pre-averages each
/// window directly and tests every window pair for overlap.
pub fn hy_naive_oracle(panel: &Panel, kernel: &Kernel, k_n: usize) -> Result<CovEstimate> {
    check_window(panel, k_n)?;
    let d = panel.dim();
    let psi = kernel.psi();
    let windows: Vec<Vec<(f64, f64, f64)>> = panel
        .series()
        .iter()
        .map(|s| {
            let (t, y) = (s.times(), s.values());
            let n_k = s.n_intervals();
            (0..=n_k + 1 - k_n)
                .map(|i| {
                    let mut v = 0.0;
                    for j in 1..k_n {
                        v += kernel.g(j as f64 / k_n as f64) * (y[i + j] - y[i + j - 1]);
                    }
                    let end = if i + k_n <= n_k { t[i + k_n] } else { t[n_k] };
                    (t[i], end, v)
                })
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(d, d);
    let mut counts = vec![vec![0; d]; d];
    for k in 0..d {
        for l in 0..d {
            let mut acc = 0.0;
            for &(a1, b1, v1) in &windows[k] {
                for &(a2, b2, v2) in &windows[l] {
                    // (a1, b1] ∩ (a2, b2] ≠ ∅
                    if a1.max(a2) < b1.min(b2) {
                        acc += v1 * v2;
                        counts[k][l] += 1;
                    }
                }
            }
            m[(k, l)] = acc / (psi * k_n as f64).powi(2);
        }
    }
    Ok(CovEstimate {
        raw_matrix: m.clone(),
        matrix: m,
        k_n,
        theta: None,
        n_total: panel.n_total(),
        calibration: None,
        overlap_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::TickSeries;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn equidistant(name: &str, values: Vec<f64>) -> TickSeries {
        let m = values.len() - 1;
        TickSeries::new(name, (0..=m).map(|i| i as f64 / m as f64).collect(), values).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, points: usize) -> Vec<f64> {
        let mut t: Vec<f64> = (0..points - 2).map(|_| rng.random::<f64>()).collect();
        t.push(0.0);
        t.push(1.0);
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.dedup();
        t
    }

    fn random_panel(rng: &mut ChaCha8Rng, d: usize, max_points: usize) -> Panel {
        let series = (0..d)
            .map(|k| {
                let points = rng.random_range(8..=max_points);
                let t = random_grid(rng, points);
                let y = t.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                TickSeries::new(format!("a{k}"), t, y).unwrap()
            })
            .collect();
        Panel::new(series).unwrap()
    }

    #[test]
    fn matches_naive_oracle_on_random_panels() {
        let kernel = Kernel::triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d = rng.random_range(1..=3);
            let panel = random_panel(&mut rng, d, 30);
            let k_n = rng.random_range(2..=panel.min_intervals().min(6));
            let fast = hy_matrix(&panel, &kernel, k_n).unwrap();
            let slow = hy_naive_oracle(&panel, &kernel, k_n).unwrap();
            assert!((&fast.matrix - &slow.matrix).amax() < 1e-12);
            assert_eq!(fast.overlap_counts, slow.overlap_counts);
        }
    }

    #[test]
    fn symmetric_on_same_panel() {
        let kernel = Kernel::triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let panel = random_panel(&mut rng, 3, 200);
        let hp = HyPanel::new(&panel, &kernel, 4).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                assert!((hp.pair(k, l).0 - hp.pair(l, k).0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn disjoint_windows_have_no_cross_term() {
        let kernel = Kernel::triangle();
        let a = TickSeries::new("a", vec![0.0, 0.1, 0.2, 0.3, 0.4], vec![0.0, 1.0, -1.0, 2.0, 0.5]).unwrap();
        let b = TickSeries::new("b", vec![0.6, 0.7, 0.8, 0.9, 1.0], vec![1.0, 0.0, 3.0, -2.0, 1.0]).unwrap();
        let panel = Panel::new(vec![a, b]).unwrap();
        for est in [hy_matrix(&panel, &kernel, 3).unwrap(), hy_naive_oracle(&panel, &kernel, 3).unwrap()] {
            assert_eq!(est.matrix[(0, 1)], 0.0);
            assert_eq!(est.overlap_counts[0][1], 0);
        }
    }

    #[test]
    fn univariate_band_form() {
        // d = 1: windows overlap exactly when |i - j| < k_n
        let kernel = Kernel::triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..=50).map(|_| rng.sample(StandardNormal)).collect();
        let panel = Panel::new(vec![equidistant("y", y.clone())]).unwrap();
        let k_n = 5;
        let pre = crate::preavg::preaverage(panel.asset(0), k_n, &kernel).unwrap().values;
        let last = pre.len() as isize - 1;
        let mut band = 0.0;
        for i in 0..=last {
            for j in (i - k_n as isize + 1).max(0)..=(i + k_n as isize - 1).min(last) {
                band += pre[i as usize] * pre[j as usize];
            }
        }
        band /= (0.25 * k_n as f64).powi(2);
        let est = hy_matrix(&panel, &kernel, k_n).unwrap();
        assert!((est.matrix[(0, 0)] - band).abs() < 1e-10);
    }

    #[test]
    fn interior_noise_weights_cancel() {
        // a single interior spike contributes nothing
        let kernel = Kernel::triangle();
        for k_n in [3, 4, 7] {
            let n = 60;
            for m in k_n..=n - k_n {
                let mut y = vec![0.0; n + 1];
                y[m] = 1.0;
                let panel = Panel::new(vec![equidistant("e", y)]).unwrap();
                let v = hy_matrix(&panel, &kernel, k_n).unwrap().matrix[(0, 0)];
                assert!(v.abs() < 1e-14, "k_n={k_n}, m={m}: {v}");
            }
        }
    }

    #[test]
    fn blocks_partition_the_full_sum() {
        let kernel = Kernel::triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let panel = random_panel(&mut rng, 2, 300);
        let hp = HyPanel::new(&panel, &kernel, 6).unwrap();
        let full = hp.estimate();
        for (k, l) in [(0, 1), (1, 0), (1, 1)] {
            let whole = hp.block(k, l, 0.0, 1.0);
            assert!((whole - full.matrix[(k, l)]).abs() < 1e-12);
            let edges = [0.0, 0.13, 0.5, 0.51, 0.9, 1.0];
            let parts: f64 = edges.windows(2).map(|e| hp.block(k, l, e[0], e[1])).sum();
            assert!((parts - whole).abs() < 1e-12);
            assert_eq!(hp.block(k, l, 0.3, 0.3), 0.0);
        }
        assert!(hy_block(&panel, &kernel, 6, 0, 1, (0.5, 0.2)).is_err());
    }

    #[test]
    fn partial_sums_grow_and_end_near_full() {
        let kernel = Kernel::triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let panel = random_panel(&mut rng, 2, 400);
        let hp = HyPanel::new(&panel, &kernel, 5).unwrap();
        let mut prev = 0;
        for i in 1..=40 {
            let (_, c) = hp.partial_pair(0, 1, i as f64 / 40.0);
            assert!(c >= prev);
            prev = c;
        }
        // at t = 1 only the final window of each asset is dropped
        let full = hp.estimate().matrix;
        let part = hp.partial(1.0);
        for k in 0..2 {
            for l in 0..2 {
                let rk = *hp.row_contributions(k, l).last().unwrap();
                let rl = *hp.row_contributions(l, k).last().unwrap();
                let both = hp.preaveraged(k).last().unwrap() * hp.preaveraged(l).last().unwrap() * hp.scale();
                assert!((full[(k, l)] - rk - rl + both - part[(k, l)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indexed_truncation_matches_direct_sweep() {
        let kernel = Kernel::triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let panel = random_panel(&mut rng, 2, 250);
            let hp = HyPanel::new(&panel, &kernel, 4).unwrap();
            let sums = hp.partial_sums();
            for (k, l) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let idx = hp.pair_index(k, l);
                assert!((idx.total() - hp.pair(k, l).0).abs() < 1e-10);
                for step in 0..=50 {
                    let t = step as f64 / 50.0;
                    let direct = if t > 0.0 { hp.partial_pair(k, l, t).0 } else { 0.0 };
                    assert!((idx.at(t) - direct).abs() < 1e-10, "t={t}");
                }
            }
            assert!((sums.at(0.7) - hp.partial(0.7)).amax() < 1e-10);
        }
    }

    #[test]
    fn scale_equivariance_and_shift_invariance() {
        let kernel = Kernel::triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let panel = random_panel(&mut rng, 2, 100);
        let base = hy_matrix(&panel, &kernel, 4).unwrap().matrix;
        let c = -2.5;
        let scaled = Panel::new(vec![
            panel.asset(0).with_values(panel.asset(0).values().iter().map(|v| c * v).collect()).unwrap(),
            panel.asset(1).clone(),
        ])
        .unwrap();
        let s = hy_matrix(&scaled, &kernel, 4).unwrap().matrix;
        assert!((s[(0, 0)] - c * c * base[(0, 0)]).abs() < 1e-12);
        assert!((s[(0, 1)] - c * base[(0, 1)]).abs() < 1e-12);
        assert!((s[(1, 1)] - base[(1, 1)]).abs() < 1e-12);
    }

    #[test]
    fn rejects_oversized_window() {
        let panel = Panel::new(vec![equidistant("y", vec![0.0; 6])]).unwrap();
        assert!(hy_matrix(&panel, &Kernel::triangle(), 6).is_err());
        assert!(hy_naive_oracle(&panel, &Kernel::triangle(), 6).is_err());
        assert!(hy_partial(&panel, &Kernel::triangle(), 3, 0.0).is_err());
    }
}
