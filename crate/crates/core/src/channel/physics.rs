//! Closed-form diffusion laws for a point burst in unbounded 3D space and the
//! receptor-corrected assimilation model built on top of them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Boltzmann constant in J/K (exact SI value).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Properties of the propagation medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumParams {
    /// Kelvin.
    pub temperature: f64,
    /// kg / (m s).
    pub viscosity: f64,
    pub boltzmann_constant: f64,
    /// Physics step of the particle engine, seconds.
    pub timestep: f64,
    /// Molecule-molecule restitution. Molecules are simulated as
    /// non-interacting points, so this is carried but unused.
    pub restitution: f64,
}

impl Default for MediumParams {
    fn default() -> Self {
        Self {
            temperature: 310.0,
            viscosity: 0.0011,
            boltzmann_constant: BOLTZMANN,
            timestep: 20e-6,
            restitution: 0.9,
        }
    }
}

impl MediumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(invalid("temperature", "must be > 0"));
        }
        if !(self.viscosity > 0.0) {
            return Err(invalid("viscosity", "must be > 0"));
        }
        if !(self.timestep > 0.0) {
            return Err(invalid("timestep", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(invalid("restitution", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The two molecule types: `S` carries payload from TX to RX, `R` carries
/// control messages from RX to TX.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Species {
    S,
    R,
}

impl std::fmt::Display for Species {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Species::S => f.write_str("S"),
            Species::R => f.write_str("R"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSpec {
    pub label: Species,
    /// Hydrodynamic radius, meters.
    pub molecule_radius: f64,
}

impl SpeciesSpec {
    /// Payload molecules, 1.75 nm.
    pub fn payload() -> Self {
        Self {
            label: Species::S,
            molecule_radius: 1.75e-9,
        }
    }

    /// Control molecules, 3.5 nm.
    pub fn control() -> Self {
        Self {
            label: Species::R,
            molecule_radius: 3.5e-9,
        }
    }
}

/// A spherical bio-nanomachine covered with receptors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeGeometry {
    /// Meters.
    pub node_radius: f64,
    pub receptor_count: u32,
    /// Meters.
    pub receptor_radius: f64,
    /// Seconds a receptor stays busy after an absorption.
    pub trafficking_time: f64,
}

impl NodeGeometry {
    /// TX node: absorbs R molecules through 4 nm receptors.
    pub fn transmitter() -> Self {
        Self {
            node_radius: 2.5e-6,
            receptor_count: 10_000,
            receptor_radius: 4e-9,
            trafficking_time: 200e-6,
        }
    }

    /// RX node: absorbs S molecules through 8 nm receptors.
    pub fn receiver() -> Self {
        Self {
            node_radius: 2.5e-6,
            receptor_count: 10_000,
            receptor_radius: 8e-9,
            trafficking_time: 200e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.receptor_radius > 0.0) {
            return Err(invalid("receptor_radius", "must be > 0"));
        }
        if !(self.node_radius > self.receptor_radius) {
            return Err(invalid("node_radius", "must exceed the receptor radius"));
        }
        if !(self.trafficking_time >= 0.0) {
            return Err(invalid("trafficking_time", "must be >= 0"));
        }
        Ok(())
    }
}

/// Michaelis-Menten-like receptor correction `c1 R / (c2 + R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub c1: f64,
    pub c2: f64,
}

impl Default for GammaFit {
    fn default() -> Self {
        Self { c1: 5.344, c2: 8000.0 }
    }
}

/// Stokes-Einstein coefficient `k_B T / (6 pi eta r)` in m^2/s.
pub fn diffusion_coefficient(medium: &MediumParams, species: &SpeciesSpec) -> Result<f64> {
    if !(species.molecule_radius > 0.0) {
        return Err(invalid("molecule_radius", "must be > 0"));
    }
    medium.validate()?;
    Ok(medium.boltzmann_constant * medium.temperature / (6.0 * PI * medium.viscosity * species.molecule_radius))
}

fn check_time_distance(t: f64, d: f64, diffusion: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(invalid("t", "must be > 0"));
    }
    if !(d >= 0.0) {
        return Err(invalid("d", "must be >= 0"));
    }
    if !(diffusion > 0.0) {
        return Err(invalid("diffusion", "must be > 0"));
    }
    Ok(())
}

/// Concentration (molecules/m^3) at distance `d` and time `t` after an
/// instantaneous point release of `q` molecules.
pub fn concentration(q: f64, t: f64, d: f64, diffusion: f64) -> Result<f64> {
    check_time_distance(t, d, diffusion)?;
    Ok(q / (4.0 * PI * diffusion * t).powf(1.5) * (-d * d / (4.0 * diffusion * t)).exp())
}

/// Radial Fick flux `-D dc/dd` in molecules/(m^2 s); positive points away
/// from the release point.
pub fn flux(q: f64, t: f64, d: f64, diffusion: f64) -> Result<f64> {
    let c = concentration(q, t, d, diffusion)?;
    // dc/dd = -c d / (2 D t)
    Ok(c * d / (2.0 * t))
}

/// Receptor correction factor; zero without receptors, saturating at `c1`.
pub fn gamma(receptors: u32, fit: &GammaFit) -> f64 {
    let r = f64::from(receptors);
    fit.c1 * r / (fit.c2 + r)
}

fn check_far_field(d: f64, node: &NodeGeometry) -> Result<()> {
    let diameter = 2.0 * node.node_radius;
    if !(d >= diameter) {
        return Err(Error::InvalidGeometry {
            distance_m: d,
            diameter_m: diameter,
        });
    }
    Ok(())
}

/// Expected number of molecules assimilated by `node` out of a burst of `q`
/// released at center distance `d`: `gamma(R) q (r/d)^2`.
///
/// The disc approximation behind the inverse-square law assumes `d` is at
/// least ten node radii; closer than one node diameter is rejected.
pub fn assimilation_count(receptors: u32, d: f64, q: f64, node: &NodeGeometry, fit: &GammaFit) -> Result<f64> {
    check_far_field(d, node)?;
    if !(q >= 0.0) {
        return Err(invalid("q", "must be >= 0"));
    }
    let ratio = node.node_radius / d;
    Ok(gamma(receptors, fit) * q * ratio * ratio)
}

/// Per-molecule assimilation probability `gamma(R) (r/d)^2`.
pub fn p_assim(receptors: u32, d: f64, node: &NodeGeometry, fit: &GammaFit) -> Result<f64> {
    check_far_field(d, node)?;
    let ratio = node.node_radius / d;
    let p = gamma(receptors, fit) * ratio * ratio;
    if p > 1.0 {
        return Err(Error::ModelOutOfRange { value: p });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(a.abs())
    }

    fn um(x: f64) -> f64 {
        x * 1e-6
    }

    #[test]
    fn stokes_einstein_values() {
        let m = MediumParams::default();
        let d_r = diffusion_coefficient(&m, &SpeciesSpec::control()).unwrap();
        let d_s = diffusion_coefficient(&m, &SpeciesSpec::payload()).unwrap();
        assert!(rel(d_r, 5.8977e-11, 1e-4), "{d_r}");
        assert!(rel(d_s, 1.17954e-10, 1e-4), "{d_s}");
        assert!(rel(d_s, 2.0 * d_r, 1e-12));
    }

    #[test]
    fn diffusion_rejects_bad_radius() {
        let m = MediumParams::default();
        let bad = SpeciesSpec {
            label: Species::R,
            molecule_radius: 0.0,
        };
        assert!(matches!(
            diffusion_coefficient(&m, &bad),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn concentration_at_origin_is_peak_normalisation() {
        let (q, t, dd) = (8000.0, 2.0, 1.18e-10);
        let c0 = concentration(q, t, 0.0, dd).unwrap();
        assert!(rel(c0, q / (4.0 * PI * dd * t).powf(1.5), 1e-14));
        assert!(concentration(q, 0.0, 1e-6, dd).is_err());
        assert!(concentration(q, -1.0, 1e-6, dd).is_err());
    }

    #[test]
    fn concentration_reference_point() {
        // Frozen with 30-digit arithmetic: Q=8000, D=1.18e-10, d=26.5 um, t=d^2/(6D).
        let dd = 1.18e-10;
        let d = um(26.5);
        let t = d * d / (6.0 * dd);
        let c = concentration(8000.0, t, d, dd).unwrap();
        assert!(rel(c, 3.164_628_404_814_2e16, 1e-10), "{c}");
    }

    #[test]
    fn flux_vanishes_at_origin_and_points_outward() {
        let dd = 1.18e-10;
        assert_eq!(flux(1000.0, 1.0, 0.0, dd).unwrap(), 0.0);
        let t = 0.5;
        let d = (6.0 * dd * t).sqrt() * 1.5;
        assert!(flux(1000.0, t, d, dd).unwrap() > 0.0);
    }

    #[test]
    fn gamma_reference_and_limits() {
        let fit = GammaFit::default();
        assert_eq!(gamma(0, &fit), 0.0);
        assert!((gamma(10_000, &fit) - 2.968_888_888_9).abs() < 1e-9);
        assert!(gamma(u32::MAX, &fit) < fit.c1);
        assert!((gamma(u32::MAX, &fit) - fit.c1).abs() < 1e-5);
    }

    #[test]
    fn assimilation_reference_values() {
        let fit = GammaFit::default();
        let tx = NodeGeometry::transmitter();
        let a = assimilation_count(10_000, um(26.5), 8000.0, &tx, &fit).unwrap();
        assert!((a - 211.384).abs() < 1e-3, "{a}");
        assert_eq!(assimilation_count(10_000, um(26.5), 0.0, &tx, &fit).unwrap(), 0.0);
        let far = assimilation_count(10_000, um(53.0), 8000.0, &tx, &fit).unwrap();
        assert!(rel(far * 4.0, a, 1e-12));
        assert!(matches!(
            assimilation_count(10_000, um(4.0), 1.0, &tx, &fit),
            Err(Error::InvalidGeometry { .. })
        ));
    }

    #[test]
    fn assimilation_probability_reference_values() {
        let fit = GammaFit::default();
        let tx = NodeGeometry::transmitter();
        let p = p_assim(10_000, um(26.5), &tx, &fit).unwrap();
        assert!((p - 0.02642).abs() < 1e-5, "{p}");
        let p = p_assim(10_000, um(61.9), &tx, &fit).unwrap();
        assert!((p - 0.004843).abs() < 1e-6, "{p}");
        assert_eq!(p_assim(0, um(26.5), &tx, &fit).unwrap(), 0.0);
        // gamma saturates at 5.344, so the model breaks down once (r/d)^2 > 1/5.344
        assert!(matches!(
            p_assim(u32::MAX, um(5.5), &tx, &fit),
            Err(Error::ModelOutOfRange { .. })
        ));
    }
}
