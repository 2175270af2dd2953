//! Window-size rule and pre-averaging in tick time.

use serde::{Deserialize, Serialize};

use crate::error::{HyError, Result};
use crate::grids::TickSeries;
use crate::kernel::Kernel;

/// How `θ√n` is turned into an integer window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnRule {
    /// Round half up.
    Round,
    /// Ceiling, as used in the simulation study.
    #[default]
    Ceil,
}

impl std::str::FromStr for KnRule {
    type Err = HyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round" => Ok(KnRule::Round),
            "ceil" => Ok(KnRule::Ceil),
            other => Err(HyError::Domain(format!("unknown k_n rule '{other}' (round|ceil)"))),
        }
    }
}

impl std::fmt::Display for KnRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KnRule::Round => "round",
            KnRule::Ceil => "ceil",
        })
    }
}

/// `k_n` from the pooled count `n` and `θ`, never below 2.
pub fn window_size(n: usize, theta: f64, rule: KnRule) -> usize {
    let raw = theta * (n as f64).sqrt();
    let k = match rule {
        KnRule::Round => (raw + 0.5).floor(),
        KnRule::Ceil => raw.ceil(),
    };
    (k as usize).max(2)
}

/// Pre-averaged values `Ȳ_{t_i}`, `i = 0, …, n_k - k_n + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreAveraged {
    pub k_n: usize,
    pub values: Vec<f64>,
}

impl PreAveraged {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `Ȳ_{t_i} = Σ_{j=1}^{k_n-1} g(j/k_n) (Y_{t_{i+j}} - Y_{t_{i+j-1}})`.
pub fn preaverage(series: &TickSeries, k_n: usize, kernel: &Kernel) -> Result<PreAveraged> {
    let values = preaverage_values(series.values(), k_n, kernel)
        .map_err(|reason| HyError::validation(series.name(), None, reason))?;
    Ok(PreAveraged { k_n, values })
}

pub(crate) fn preaverage_values(y: &[f64], k_n: usize, kernel: &Kernel) -> std::result::Result<Vec<f64>, String> {
    let n_k = y.len().saturating_sub(1);
    if k_n < 2 {
        return Err(format!("window k_n = {k_n} must be at least 2"));
    }
    if k_n > n_k {
        return Err(format!("window k_n = {k_n} exceeds the {n_k} available intervals"));
    }
    let weights = kernel.discrete_weights(k_n);
    let increments: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    // increment index of Δ_{t_{i+j}} is i + j - 1
    Ok((0..=n_k + 1 - k_n)
        .map(|i| {
            weights
                .iter()
                .zip(&increments[i..])
                .map(|(w, dy)| w * dy)
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn series(values: Vec<f64>) -> TickSeries {
        let m = values.len() - 1;
        let times = (0..=m).map(|i| i as f64 / m as f64).collect();
        TickSeries::new("y", times, values).unwrap()
    }

    #[test]
    fn window_rule_examples() {
        // pooled count of the subset scenario, ceiling rule
        assert_eq!(window_size(4680 + 2340, 0.15, KnRule::Ceil), 13);
        assert_eq!(window_size(10_000, 1.0, KnRule::Round), 100);
        assert_eq!(window_size(10_000, 1.0, KnRule::Ceil), 100);
        assert_eq!(window_size(50, 0.1, KnRule::Round), 2);
        assert_eq!("ceil".parse::<KnRule>().unwrap(), KnRule::Ceil);
        assert!("floor".parse::<KnRule>().is_err());
    }

    #[test]
    fn hand_evaluated_window() {
        let out = preaverage(&series(vec![0.0, 1.0, 3.0, 2.0, 5.0]), 3, &Kernel::triangle()).unwrap();
        assert_eq!(out.len(), 4 - 3 + 2);
        assert_relative_eq!(out.values[0], 1.0, epsilon = 1e-15);
        // (1/3)(2) + (1/3)(-1)
        assert_relative_eq!(out.values[1], 1.0 / 3.0, epsilon = 1e-15);
        // (1/3)(-1) + (1/3)(3)
        assert_relative_eq!(out.values[2], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_series_gives_zeros() {
        let out = preaverage(&series(vec![4.2; 30]), 5, &Kernel::triangle()).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_too_large() {
        assert!(preaverage(&series(vec![0.0; 5]), 5, &Kernel::triangle()).is_err());
        assert!(preaverage(&series(vec![0.0; 5]), 1, &Kernel::triangle()).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariance(raw in prop::collection::vec(-640i32..640, 8..40), c in -1000i32..1000, k in 2usize..6) {
            // dyadic data and integer shifts keep every increment exact
            let kernel = Kernel::triangle();
            let ys: Vec<f64> = raw.iter().map(|&r| r as f64 / 64.0).collect();
            let base = preaverage(&series(ys.clone()), k, &kernel).unwrap();
            let shifted = preaverage(&series(ys.iter().map(|y| y + c as f64).collect()), k, &kernel).unwrap();
            prop_assert_eq!(base.values, shifted.values);
        }

        #[test]
        fn linearity(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 8..40),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let kernel = Kernel::triangle();
            let y1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let mix: Vec<f64> = pairs.iter().map(|p| a * p.0 + b * p.1).collect();
            let p1 = preaverage(&series(y1), 4, &kernel).unwrap();
            let p2 = preaverage(&series(y2), 4, &kernel).unwrap();
            let pm = preaverage(&series(mix), 4, &kernel).unwrap();
            for i in 0..pm.len() {
                prop_assert!((pm.values[i] - (a * p1.values[i] + b * p2.values[i])).abs() < 1e-12);
            }
        }
    }
}
