//! Tick data, panel validation and empirical time transforms.
//!
//! Conventions: an asset observed at `t_0 < … < t_{n_k}` has `n_k` intervals,
//! i.e. `n_k + 1` observations, and the pooled count is `n = Σ n_k`.

use serde::{Deserialize, Serialize};

use crate::error::{HyError, Result};

/// Joint grids with fewer intervals than this get no time transform of their
/// own; terms depending on it are dropped.
pub const MIN_JOINT_FOR_TRANSFORM: usize = 10;

/// Observations of one asset on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSeries {
    name: String,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TickSeries {
    /// Validates strict monotonicity, the `[0, 1]` range and finiteness.
    pub fn new(name: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if times.len() != values.len() {
            return Err(HyError::validation(
                &name,
                None,
                format!("{} times but {} values", times.len(), values.len()),
            ));
        }
        if times.len() < 2 {
            return Err(HyError::validation(&name, None, "need at least two observations"));
        }
        for (i, (&t, &v)) in times.iter().zip(&values).enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(HyError::validation(&name, Some(i), format!("time {t} outside [0, 1]")));
            }
            if !v.is_finite() {
                return Err(HyError::validation(&name, Some(i), format!("non-finite value {v}")));
            }
            if i > 0 && t <= times[i - 1] {
                return Err(HyError::validation(
                    &name,
                    Some(i),
                    format!("time {t} does not exceed previous time {}", times[i - 1]),
                ));
            }
        }
        Ok(Self { name, times, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of intervals `n_k` (one less than the number of observations).
    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }

    /// Whether the grid starts at 0 and ends at 1 as the sampling model assumes.
    pub fn spans_unit_interval(&self) -> bool {
        self.times[0] == 0.0 && *self.times.last().unwrap() == 1.0
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.name.clone(), self.times.clone(), values)
    }

    /// Index of the last observation with time `<= t`, if any.
    pub fn last_index_at_or_before(&self, t: f64) -> Option<usize> {
        self.times.partition_point(|&x| x <= t).checked_sub(1)
    }
}

/// A validated collection of `d >= 1` tick series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    series: Vec<TickSeries>,
}

impl Panel {
    pub fn new(series: Vec<TickSeries>) -> Result<Self> {
        if series.is_empty() {
            return Err(HyError::validation("<panel>", None, "a panel needs at least one asset"));
        }
        Ok(Self { series })
    }

    pub fn dim(&self) -> usize {
        self.series.len()
    }

    pub fn series(&self) -> &[TickSeries] {
        &self.series
    }

    pub fn asset(&self, k: usize) -> &TickSeries {
        &self.series[k]
    }

    pub fn names(&self) -> Vec<String> {
        self.series.iter().map(|s| s.name.clone()).collect()
    }

    /// Pooled count `n = Σ n_k`.
    pub fn n_total(&self) -> usize {
        self.series.iter().map(TickSeries::n_intervals).sum()
    }

    /// Shares `m_k = n_k / n`.
    pub fn shares(&self) -> Vec<f64> {
        let n = self.n_total() as f64;
        self.series.iter().map(|s| s.n_intervals() as f64 / n).collect()
    }

    pub fn min_intervals(&self) -> usize {
        self.series.iter().map(TickSeries::n_intervals).min().unwrap()
    }
}

/// Validates a list of series into a [`Panel`].
pub fn build_panel(series: Vec<TickSeries>) -> Result<Panel> {
    Panel::new(series)
}

/// Piecewise-linear monotone map `[0, 1] → [0, 1]` carrying a grid to an
/// equidistant one, with a smoothed derivative estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneMap {
    knots: Vec<f64>,
    levels: Vec<f64>,
    slopes: Vec<f64>,
    window: usize,
}

impl MonotoneMap {
    /// Interpolates `(t_i, i/m)`. When the grid does not reach 0 or 1 it is
    /// padded with a fractional interval of the neighbouring spacing and the
    /// levels rescaled, so `f(0) = 0` and `f(1) = 1` still hold.
    pub fn from_grid(times: &[f64]) -> Result<Self> {
        let m = times.len().saturating_sub(1);
        if m == 0 {
            return Err(HyError::Domain("time transform needs at least two grid points".into()));
        }
        let first = times[0];
        let last = times[m];
        let lead = if first > 0.0 { first / (times[1] - first) } else { 0.0 };
        let trail = if last < 1.0 { (1.0 - last) / (last - times[m - 1]) } else { 0.0 };
        let total = m as f64 + lead + trail;

        let mut knots = Vec::with_capacity(m + 3);
        let mut levels = Vec::with_capacity(m + 3);
        if first > 0.0 {
            knots.push(0.0);
            levels.push(0.0);
        }
        for (i, &t) in times.iter().enumerate() {
            knots.push(t);
            levels.push((i as f64 + lead) / total);
        }
        if last < 1.0 {
            knots.push(1.0);
            levels.push(1.0);
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) {
                return Err(HyError::Domain(format!(
                    "zero-length interval at time {} in time transform",
                    w[0]
                )));
            }
        }

        let intervals = knots.len() - 1;
        let window = ((m as f64).sqrt().ceil() as usize).clamp(1, intervals);
        let back = (window - 1) / 2;
        let mut slopes = Vec::with_capacity(intervals);
        for r in 0..intervals {
            let j0 = r.saturating_sub(back).min(intervals - window);
            let j1 = j0 + window;
            slopes.push((levels[j1] - levels[j0]) / (knots[j1] - knots[j0]));
        }
        let mass: f64 = slopes
            .iter()
            .zip(knots.windows(2))
            .map(|(s, w)| s * (w[1] - w[0]))
            .sum();
        for s in &mut slopes {
            *s /= mass;
        }
        Ok(Self {
            knots,
            levels,
            slopes,
            window,
        })
    }

    fn interval_of(&self, x: f64) -> usize {
        let last = self.slopes.len() - 1;
        self.knots.partition_point(|&k| k <= x).saturating_sub(1).min(last)
    }

    /// `f(x)`; clamps outside `[0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let r = self.interval_of(x);
        let (a, b) = (self.knots[r], self.knots[r + 1]);
        let (fa, fb) = (self.levels[r], self.levels[r + 1]);
        fa + (fb - fa) * (x - a) / (b - a)
    }

    /// Smoothed derivative estimate `f'(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        self.slopes[self.interval_of(x.clamp(0.0, 1.0))]
    }

    pub fn smoothing_window(&self) -> usize {
        self.window
    }

    pub fn slope_range(&self) -> (f64, f64) {
        self.slopes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)))
    }

    /// `Σ f'(interval) · length`, equal to one by construction.
    pub fn derivative_mass(&self) -> f64 {
        self.slopes
            .iter()
            .zip(self.knots.windows(2))
            .map(|(s, w)| s * (w[1] - w[0]))
            .sum()
    }
}

/// A common observation time of two assets with its index in each grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPoint {
    pub p: usize,
    pub time: f64,
    pub index_k: usize,
    pub index_l: usize,
}

/// Common points of the grids of assets `k` and `l`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointGrid {
    pub k: usize,
    pub l: usize,
    pub points: Vec<JointPoint>,
    /// Interval count of the joint grid (points minus one, zero when empty).
    pub n_joint: usize,
    pub share: f64,
    pub map: Option<MonotoneMap>,
}

impl JointGrid {
    /// Swaps the roles of the two assets.
    fn transposed(&self) -> JointGrid {
        JointGrid {
            k: self.l,
            l: self.k,
            points: self
                .points
                .iter()
                .map(|p| JointPoint {
                    index_k: p.index_l,
                    index_l: p.index_k,
                    ..*p
                })
                .collect(),
            n_joint: self.n_joint,
            share: self.share,
            map: self.map.clone(),
        }
    }
}

/// Diagnostics on how well a panel fits the comparable-sampling assumptions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDiagnostics {
    /// Estimated bound `M` with `1/M <= f'_k <= M` for every asset.
    pub comparability_bound: f64,
    /// `[k][l]`: most `l`-grid points in one closed `k`-grid interval.
    pub interleaving: Vec<Vec<usize>>,
    /// `[k][l]`: joint-point shares `m_kl`.
    pub joint_shares: Vec<Vec<f64>>,
    /// Assets whose grid does not start at 0 or end at 1.
    pub boundary_warnings: Vec<String>,
}

/// Empirical versions of every time-transform object of the sampling model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeTransform {
    n_total: usize,
    shares: Vec<f64>,
    maps: Vec<MonotoneMap>,
    /// Row-major `d × d` table of joint grids.
    joints: Vec<JointGrid>,
    diagnostics: GridDiagnostics,
}

fn merge_joint(times_k: &[f64], times_l: &[f64], tol: f64) -> Vec<JointPoint> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < times_k.len() && j < times_l.len() {
        let (a, b) = (times_k[i], times_l[j]);
        if (a - b).abs() <= tol {
            out.push(JointPoint {
                p: out.len(),
                time: a,
                index_k: i,
                index_l: j,
            });
            i += 1;
            j += 1;
        } else if a < b {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn max_interleaving(outer: &[f64], inner: &[f64]) -> usize {
    outer
        .windows(2)
        .map(|w| {
            let lo = inner.partition_point(|&x| x < w[0]);
            let hi = inner.partition_point(|&x| x <= w[1]);
            hi - lo
        })
        .max()
        .unwrap_or(0)
}

/// Builds the empirical time transform of a panel.
///
/// Observations of two assets whose times differ by at most `joint_tolerance`
/// count as a common point.
pub fn empirical_time_transform(panel: &Panel, joint_tolerance: f64) -> Result<TimeTransform> {
    if !(joint_tolerance >= 0.0) {
        return Err(HyError::Domain(format!(
            "joint tolerance must be non-negative, got {joint_tolerance}"
        )));
    }
    let d = panel.dim();
    let n = panel.n_total();
    let maps = panel
        .series()
        .iter()
        .map(|s| {
            MonotoneMap::from_grid(s.times()).map_err(|e| match e {
                HyError::Domain(r) => HyError::validation(s.name(), None, r),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut joints: Vec<Option<JointGrid>> = vec![None; d * d];
    for k in 0..d {
        for l in k..d {
            let tk = panel.asset(k).times();
            let points = if k == l {
                (0..tk.len())
                    .map(|p| JointPoint {
                        p,
                        time: tk[p],
                        index_k: p,
                        index_l: p,
                    })
                    .collect()
            } else {
                merge_joint(tk, panel.asset(l).times(), joint_tolerance)
            };
            for w in points.windows(2) {
                if !(w[1].time > w[0].time) {
                    return Err(HyError::validation(
                        format!("{}/{}", panel.asset(k).name(), panel.asset(l).name()),
                        Some(w[1].index_k),
                        "joint grid has a zero-length interval after tolerance merging",
                    ));
                }
            }
            let n_joint = points.len().saturating_sub(1);
            let map = if n_joint >= MIN_JOINT_FOR_TRANSFORM {
                let times: Vec<f64> = points.iter().map(|p| p.time).collect();
                Some(MonotoneMap::from_grid(&times)?)
            } else {
                None
            };
            let grid = JointGrid {
                k,
                l,
                points,
                n_joint,
                share: n_joint as f64 / n as f64,
                map,
            };
            if k != l {
                joints[l * d + k] = Some(grid.transposed());
            }
            joints[k * d + l] = Some(grid);
        }
    }
    let joints: Vec<JointGrid> = joints.into_iter().map(Option::unwrap).collect();

    let comparability_bound = maps
        .iter()
        .map(|m| {
            let (lo, hi) = m.slope_range();
            hi.max(1.0 / lo)
        })
        .fold(1.0, f64::max);
    let interleaving = (0..d)
        .map(|k| {
            (0..d)
                .map(|l| max_interleaving(panel.asset(k).times(), panel.asset(l).times()))
                .collect()
        })
        .collect();
    let joint_shares = (0..d).map(|k| (0..d).map(|l| joints[k * d + l].share).collect()).collect();
    let boundary_warnings = panel
        .series()
        .iter()
        .filter(|s| !s.spans_unit_interval())
        .map(|s| {
            format!(
                "asset {} observed on [{}, {}] rather than [0, 1]",
                s.name(),
                s.times()[0],
                s.times().last().unwrap()
            )
        })
        .collect();

    Ok(TimeTransform {
        n_total: n,
        shares: panel.shares(),
        maps,
        joints,
        diagnostics: GridDiagnostics {
            comparability_bound,
            interleaving,
            joint_shares,
            boundary_warnings,
        },
    })
}

impl TimeTransform {
    pub fn dim(&self) -> usize {
        self.shares.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// `m_k`.
    pub fn share(&self, k: usize) -> f64 {
        self.shares[k]
    }

    pub fn map(&self, k: usize) -> &MonotoneMap {
        &self.maps[k]
    }

    /// `f_k(x)`.
    pub fn f(&self, k: usize, x: f64) -> f64 {
        self.maps[k].eval(x)
    }

    /// `f'_k(x)`.
    pub fn f_prime(&self, k: usize, x: f64) -> f64 {
        self.maps[k].derivative(x)
    }

    /// `h_kl(x) = m_k f'_k(x) / (m_l f'_l(x))`.
    pub fn h(&self, k: usize, l: usize, x: f64) -> f64 {
        (self.shares[k] * self.f_prime(k, x)) / (self.shares[l] * self.f_prime(l, x))
    }

    pub fn joint(&self, k: usize, l: usize) -> &JointGrid {
        &self.joints[k * self.dim() + l]
    }

    /// `m_kl`.
    pub fn joint_share(&self, k: usize, l: usize) -> f64 {
        self.joint(k, l).share
    }

    /// `m_kl · f'_kl(x)`, or `None` when the joint grid is too sparse to
    /// carry its own transform.
    pub fn joint_density(&self, k: usize, l: usize, x: f64) -> Option<f64> {
        if k == l {
            return Some(self.shares[k] * self.f_prime(k, x));
        }
        let g = self.joint(k, l);
        g.map.as_ref().map(|m| g.share * m.derivative(x))
    }

    pub fn diagnostics(&self) -> &GridDiagnostics {
        &self.diagnostics
    }
}

/// All common points of assets `k` and `l`, sorted by time.
pub fn joint_points(tt: &TimeTransform, k: usize, l: usize) -> &[JointPoint] {
    &tt.joint(k, l).points
}
