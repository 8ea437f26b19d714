use molcom::channel::{
    assimilation_count, concentration, diffusion_coefficient, flux, gamma, p_assim, p_correct_symbol, GammaFit,
    MediumParams, NodeGeometry, SpeciesSpec,
};
use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Composite Simpson rule for `f` on `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            w * f(a + i as f64 * h)
        })
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

#[test]
fn stokes_einstein_coefficients() {
    let medium = MediumParams::default();
    let ds = diffusion_coefficient(&medium, &SpeciesSpec::payload()).unwrap();
    let dr = diffusion_coefficient(&medium, &SpeciesSpec::control()).unwrap();
    assert!(rel_err(ds, 1.17954e-10) < 1e-5, "{ds}");
    assert!(rel_err(dr, 5.8977e-11) < 1e-5, "{dr}");
    assert!(rel_err(ds, 2.0 * dr) < 1e-12);
}

#[test]
fn concentration_integrates_to_burst_over_three_decades() {
    let (q, d) = (8000.0, 1.17954e-10);
    for t in [0.01f64, 0.1, 1.0, 10.0] {
        let spread = (4.0 * d * t).sqrt();
        let total = simpson(
            |r| 4.0 * std::f64::consts::PI * r * r * concentration(q, t, r, d).unwrap(),
            0.0,
            12.0 * spread,
            4000,
        );
        assert!(rel_err(total, q) < 1e-3, "t = {t}: {total}");
    }
}

#[test]
fn concentration_matches_quadrature_point() {
    // At t = d^2 / (6D) the density is Q (4 pi D t)^-3/2 e^-3/2.
    let (q, dc, d) = (8000.0, 1.18e-10, 26.5e-6);
    let t = d * d / (6.0 * dc);
    let expected = q * (4.0 * std::f64::consts::PI * dc * t).powf(-1.5) * (-1.5f64).exp();
    assert!(rel_err(concentration(q, t, d, dc).unwrap(), expected) < 1e-12);
}

#[test]
fn assimilation_reference_values() {
    let rx = NodeGeometry::receiver();
    let fit = GammaFit::default();
    assert!((gamma(10_000, &fit) - 2.968889).abs() < 1e-6);
    assert!((assimilation_count(10_000, 26.5e-6, 8000.0, &rx, &fit).unwrap() - 211.384).abs() < 1e-3);
    assert!((p_assim(10_000, 26.5e-6, &rx, &fit).unwrap() - 0.026423).abs() < 1e-6);
    assert!((p_assim(10_000, 61.9e-6, &rx, &fit).unwrap() - 0.0048428).abs() < 1e-7);
    assert_eq!(p_assim(0, 26.5e-6, &rx, &fit).unwrap(), 0.0);
}

#[test]
fn binomial_tail_reference() {
    let p = p_correct_symbol(2000, 0.026423 * 0.889, 34);
    assert!((p - 0.98084596).abs() < 1e-7, "{p}");
    assert_eq!(p_correct_symbol(500, 0.3, 0), 1.0);
    assert_eq!(p_correct_symbol(500, 0.0, 1), 0.0);
}

proptest! {
    #[test]
    fn flux_matches_central_difference(
        q in 1.0f64..1e6,
        t in 1e-2f64..1e2,
        u in 0.05f64..4.0,
        dc in 1e-11f64..1e-9,
    ) {
        let d = u * (4.0 * dc * t).sqrt();
        let h = d * 1e-5;
        let fd = -dc * (concentration(q, t, d + h, dc).unwrap() - concentration(q, t, d - h, dc).unwrap()) / (2.0 * h);
        let j = flux(q, t, d, dc).unwrap();
        prop_assert!(j > 0.0);
        prop_assert!(rel_err(j, fd) < 1e-6, "flux {j} vs {fd}");
    }

    #[test]
    fn gamma_is_monotone_concave_and_bounded(r in 0u32..1_000_000, c1 in 0.1f64..20.0, c2 in 1.0f64..1e5) {
        let fit = GammaFit { c1, c2 };
        let (g0, g1, g2) = (gamma(r, &fit), gamma(r + 1, &fit), gamma(r + 2, &fit));
        prop_assert!(g1 >= g0);
        prop_assert!(g2 - g1 <= g1 - g0 + 1e-12 * c1);
        prop_assert!(g2 < c1);
    }

    #[test]
    fn assimilation_is_linear_in_burst_and_inverse_square(
        q in 1.0f64..1e6,
        k in 1.0f64..10.0,
        d in 10e-6f64..100e-6,
        s in 1.0f64..3.0,
    ) {
        let rx = NodeGeometry::receiver();
        let fit = GammaFit::default();
        let a = assimilation_count(10_000, d, q, &rx, &fit).unwrap();
        let scaled_q = assimilation_count(10_000, d, k * q, &rx, &fit).unwrap();
        prop_assert!(rel_err(scaled_q, k * a) < 1e-12);
        let far = assimilation_count(10_000, s * d, q, &rx, &fit).unwrap();
        prop_assert!(rel_err(far * (s * d).powi(2), a * d * d) < 1e-12);
    }

    #[test]
    fn binomial_tail_matches_reference_cdf(q in 0u64..5000, p in 0.0f64..1.0, k in 0u64..200) {
        let oracle = if k == 0 {
            1.0
        } else {
            1.0 - Binomial::new(p, q).unwrap().cdf(k - 1)
        };
        prop_assert!((p_correct_symbol(q, p, k) - oracle).abs() < 1e-9);
    }

    #[test]
    fn binomial_tail_monotonicity(q in 1u64..20_000, p in 0.0f64..0.2, k in 1u64..100) {
        let base = p_correct_symbol(q, p, k);
        prop_assert!(p_correct_symbol(q + 1, p, k) >= base - 1e-12);
        prop_assert!(p_correct_symbol(q, (p * 1.1).min(1.0), k) >= base - 1e-12);
        prop_assert!(p_correct_symbol(q, p, k + 1) <= base + 1e-12);
    }
}
