//! Symbol reliability: exact binomial tails and the ranging burst search.

use serde::{Deserialize, Serialize};

use super::physics::{p_assim, GammaFit, NodeGeometry};
use crate::error::{invalid, Error, Result};

/// Largest burst the exact tail summation is meant for.
pub const MAX_EXACT_TRIALS: u64 = 1_000_000;

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x >= 0.5` (Lanczos, g = 7).
pub(crate) fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x >= 0.5);
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `P[X >= threshold]` for `X ~ Binomial(q, p_hit)`, summed term by term in
/// log space. This is the probability of reading a 1-symbol correctly when
/// each of `q` molecules lands inside the read window with `p_hit`.
pub fn p_correct_symbol(q: u64, p_hit: f64, threshold: u64) -> f64 {
    assert!((0.0..=1.0).contains(&p_hit), "p_hit out of [0,1]: {p_hit}");
    if threshold == 0 {
        return 1.0;
    }
    if threshold > q || p_hit == 0.0 {
        return 0.0;
    }
    if p_hit == 1.0 {
        return 1.0;
    }
    let ln_p = p_hit.ln();
    let ln_q = (-p_hit).ln_1p();
    let log_pmf = |k: u64| ln_choose(q, k) + k as f64 * ln_p + (q - k) as f64 * ln_q;

    // Sum whichever side of the mode the threshold leaves smaller, anchored at
    // its largest term, so tails close to 1 keep full absolute precision.
    let mode = (((q + 1) as f64) * p_hit).floor() as u64;
    if threshold <= mode {
        let anchor = log_pmf(threshold - 1);
        let mut lower = 0.0;
        for k in (0..threshold).rev() {
            let term = (log_pmf(k) - anchor).exp();
            lower += term;
            if term < 1e-18 * lower {
                break;
            }
        }
        return (1.0 - anchor.exp() * lower).clamp(0.0, 1.0);
    }
    let anchor = log_pmf(threshold);
    let mut total = 0.0;
    for k in threshold..=q {
        let term = (log_pmf(k) - anchor).exp();
        total += term;
        if term < 1e-18 * total {
            break;
        }
    }
    (anchor.exp() * total).min(1.0)
}

/// Piecewise-linear window mass versus distance, flat beyond the end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMassTable {
    /// `(distance in meters, window mass)`, sorted by distance.
    points: Vec<(f64, f64)>,
}

impl WindowMassTable {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("window_mass", "table needs at least one point"));
        }
        if points.iter().any(|&(d, m)| !(d > 0.0) || !(0.0..=1.0).contains(&m)) {
            return Err(invalid("window_mass", "distances must be > 0 and masses in [0,1]"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { points })
    }

    /// The two reference readings: 0.889 at 26.5 um and 0.6613 at 61.9 um.
    pub fn reference() -> Self {
        Self {
            points: vec![(26.5e-6, 0.889), (61.9e-6, 0.6613)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn at(&self, d: f64) -> f64 {
        let pts = &self.points;
        if d <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if d >= last.0 {
            return last.1;
        }
        let i = pts.partition_point(|p| p.0 <= d);
        let (d0, m0) = pts[i - 1];
        let (d1, m1) = pts[i];
        m0 + (d - d0) / (d1 - d0) * (m1 - m0)
    }
}

/// Everything needed to turn a distance into a reliable control burst size.
#[derive(Debug, Clone)]
pub struct RangingModel {
    /// The node that has to detect the symbols (TX for control messages).
    pub detector: NodeGeometry,
    pub fit: GammaFit,
    pub window_mass: WindowMassTable,
    /// Detection threshold in molecules.
    pub threshold: u64,
    /// Ranging step, equal to the initial control burst.
    pub increment: u64,
    /// Largest number of ranging steps tried.
    pub max_attempts: u32,
}

impl RangingModel {
    /// Per-molecule probability of landing in the best symbol window.
    pub fn p_hit(&self, d: f64) -> Result<f64> {
        let pa = p_assim(self.detector.receptor_count, d, &self.detector, &self.fit)?;
        Ok(pa * self.window_mass.at(d))
    }

    /// Smallest multiple of `increment` whose 1-symbol reliability reaches
    /// `target_pc` at distance `d`.
    pub fn min_burst_for_reliability(&self, d: f64, target_pc: f64) -> Result<u64> {
        if !(target_pc > 0.0 && target_pc < 1.0) {
            return Err(invalid("target_pc", "must lie in (0, 1)"));
        }
        if self.increment == 0 {
            return Err(invalid("increment", "must be > 0"));
        }
        let p = self.p_hit(d)?;
        for k in 1..=u64::from(self.max_attempts) {
            let q = k * self.increment;
            if q > MAX_EXACT_TRIALS {
                break;
            }
            if p_correct_symbol(q, p, self.threshold) >= target_pc {
                return Ok(q);
            }
        }
        Err(Error::BurstOutOfRange {
            max_burst: u64::from(self.max_attempts) * self.increment,
            target: target_pc,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct summation with factorials built up multiplicatively; only usable
    /// for small n, but shares nothing with the log-space path.
    fn brute_tail(n: u64, p: f64, k0: u64) -> f64 {
        let mut pmf = (1.0 - p).powi(n as i32);
        let mut total = 0.0;
        for k in 0..=n {
            if k >= k0 {
                total += pmf;
            }
            pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        }
        total
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut f = 1.0f64;
        for n in 1..30u32 {
            f *= f64::from(n);
            assert!((ln_gamma(f64::from(n) + 1.0) - f.ln()).abs() < 1e-11);
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn trivial_tails() {
        assert_eq!(p_correct_symbol(100, 0.3, 0), 1.0);
        assert_eq!(p_correct_symbol(0, 0.3, 0), 1.0);
        assert_eq!(p_correct_symbol(100, 0.0, 1), 0.0);
        assert_eq!(p_correct_symbol(10, 0.5, 11), 0.0);
        assert_eq!(p_correct_symbol(10, 1.0, 10), 1.0);
    }

    #[test]
    fn reference_tail_at_closest_distance() {
        // Q=2000, p = 0.026423 * 0.889, threshold 34: 0.98084596 (scipy binom.sf)
        let p = 0.026_423_005_419_089_436 * 0.889;
        let pc = p_correct_symbol(2000, p, 34);
        assert!((pc - 0.980_845_960_170_691).abs() < 1e-9, "{pc}");
    }

    #[test]
    fn matches_brute_force_small_n() {
        for &(n, p, k) in &[(10, 0.3, 3), (50, 0.02, 2), (80, 0.5, 40), (120, 0.9, 100)] {
            let a = p_correct_symbol(n, p, k);
            let b = brute_tail(n, p, k);
            assert!((a - b).abs() < 1e-12, "n={n} p={p} k={k}: {a} vs {b}");
        }
    }

    #[test]
    fn window_mass_interpolation() {
        let t = WindowMassTable::reference();
        assert_eq!(t.at(26.5e-6), 0.889);
        assert_eq!(t.at(61.9e-6), 0.6613);
        assert_eq!(t.at(10e-6), 0.889);
        assert_eq!(t.at(90e-6), 0.6613);
        assert!((t.at(44.2e-6) - 0.775_15).abs() < 1e-12);
        assert!(WindowMassTable::new(vec![]).is_err());
        assert!(WindowMassTable::new(vec![(1e-6, 1.5)]).is_err());
    }

    fn model() -> RangingModel {
        RangingModel {
            detector: NodeGeometry::transmitter(),
            fit: GammaFit::default(),
            window_mass: WindowMassTable::reference(),
            threshold: 34,
            increment: 1000,
            max_attempts: 40,
        }
    }

    #[test]
    fn ranging_bursts() {
        let m = model();
        assert_eq!(m.min_burst_for_reliability(26.5e-6, 0.9).unwrap(), 2000);
        assert_eq!(m.min_burst_for_reliability(44.2e-6, 0.9).unwrap(), 6000);
        let far = m.min_burst_for_reliability(61.9e-6, 0.9).unwrap();
        assert!((14_000..=16_000).contains(&far), "{far}");
        let strict = m.min_burst_for_reliability(61.9e-6, 0.999_999).unwrap();
        assert!(strict > far);
    }

    #[test]
    fn ranging_errors() {
        let m = RangingModel {
            max_attempts: 3,
            ..model()
        };
        assert!(matches!(
            m.min_burst_for_reliability(61.9e-6, 0.9),
            Err(Error::BurstOutOfRange { .. })
        ));
        assert!(m.min_burst_for_reliability(26.5e-6, 1.0).is_err());
        assert!(m.min_burst_for_reliability(26.5e-6, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn tail_is_monotone(q in 1u64..3000, p in 0.0f64..0.2, k in 1u64..60) {
            let base = p_correct_symbol(q, p, k);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(p_correct_symbol(q + 50, p, k) >= base - 1e-12);
            prop_assert!(p_correct_symbol(q, (p + 0.01).min(1.0), k) >= base - 1e-12);
            prop_assert!(p_correct_symbol(q, p, k + 1) <= base + 1e-12);
        }
    }
}
