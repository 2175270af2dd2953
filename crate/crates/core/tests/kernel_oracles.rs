//! Kernel functionals against brute-force midpoint sums.

use pahy::kernel::{Kernel, Overlap, KERNEL_NAMES};

/// Midpoint value of `∫₀¹ ∫_{(u-1+s)x}^{1+x(s+u)} A(u) B(v) dv du`, counting
/// every `v` cell whose midpoint falls in the range.
fn overlap_midpoint(kernel: &Kernel, s: f64, x: f64, which: Overlap, m: usize) -> f64 {
    let h = 1.0 / m as f64;
    let (outer_d, inner_d) = match which {
        Overlap::GG => (false, false),
        Overlap::GGp => (false, true),
        Overlap::GpGp => (true, true),
    };
    let eval = |d: bool, t: f64| if d { kernel.g_prime(t) } else { kernel.g(t) };
    let inner: Vec<f64> = (0..m).map(|j| eval(inner_d, (j as f64 + 0.5) * h)).collect();
    let mut prefix = vec![0.0; m + 1];
    for j in 0..m {
        prefix[j + 1] = prefix[j] + inner[j] * h;
    }
    // number of midpoints strictly below y
    let below = |y: f64| -> usize { ((y / h - 0.5).ceil().max(0.0) as usize).min(m) };
    (0..m)
        .map(|i| {
            let u = (i as f64 + 0.5) * h;
            let lo = (u - 1.0 + s) * x;
            let hi = 1.0 + x * (s + u);
            let (a, b) = (below(lo), below(hi));
            if b > a {
                eval(outer_d, u) * (prefix[b] - prefix[a]) * h
            } else {
                0.0
            }
        })
        .sum()
}

#[test]
fn overlap_at_origin_matches_dense_midpoint_grid() {
    let k = Kernel::triangle();
    let oracle = overlap_midpoint(&k, 0.0, 1.0, Overlap::GG, 2000);
    let got = k.psi_overlap(0.0, 1.0, Overlap::GG).unwrap();
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    assert!((got - 1.0 / 16.0).abs() < 1e-12);
}

#[test]
fn overlap_at_generic_points_matches_midpoint_grid() {
    let k = Kernel::by_name("sine").unwrap();
    for (s, x) in [(0.3, 0.8), (-0.9, 1.7), (1.2, 0.6)] {
        for which in Overlap::ALL {
            let oracle = overlap_midpoint(&k, s, x, which, 4000);
            let got = k.psi_overlap(s, x, which).unwrap();
            assert!((got - oracle).abs() < 2e-3, "{which:?} at ({s}, {x}): {got} vs {oracle}");
        }
    }
}

#[test]
fn kappa_constants_match_brute_force_on_every_kernel() {
    let (m, ns) = (1500usize, 1500usize);
    for name in KERNEL_NAMES {
        let k = Kernel::by_name(name).unwrap();
        let got = k.kappa_constants().unwrap();
        for (which, value) in Overlap::ALL.into_iter().zip([got.kappa, got.kappa_bar, got.kappa_tilde]) {
            let hs = 4.0 / ns as f64;
            let oracle: f64 = (0..ns)
                .map(|i| {
                    let s = -2.0 + (i as f64 + 0.5) * hs;
                    overlap_midpoint(&k, s, 1.0, which, m).powi(2) * hs
                })
                .sum();
            let rel = (value - oracle).abs() / oracle;
            assert!(rel < 1e-3, "{name} {which:?}: {value} vs {oracle} (rel {rel:.2e})");
            assert!(value > 0.0);
        }
    }
}

#[test]
fn constants_are_stable_under_refinement() {
    for name in KERNEL_NAMES {
        let coarse = Kernel::by_name(name).unwrap().constants().unwrap();
        let quad = Kernel::by_name(name).unwrap().quad_settings().refined();
        let fine = Kernel::by_name_with(name, quad).unwrap().constants().unwrap();
        for (a, b) in [
            (coarse.kappa, fine.kappa),
            (coarse.kappa_bar, fine.kappa_bar),
            (coarse.kappa_tilde, fine.kappa_tilde),
            (coarse.mu, fine.mu),
            (coarse.mu_tilde, fine.mu_tilde),
        ] {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn overlap_vanishes_beyond_two_at_unit_ratio() {
    let k = Kernel::triangle();
    for s in [2.0, 2.5, -2.0, -3.1] {
        for which in Overlap::ALL {
            assert_eq!(k.psi_overlap(s, 1.0, which).unwrap(), 0.0);
        }
    }
}
