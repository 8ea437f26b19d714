//! Calibrated channel statistics and their JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::physics::Species;
use crate::error::{invalid, Error, Result};

pub const STATS_SCHEMA_VERSION: u32 = 1;

/// Distances closer than this (in um) are treated as the same calibration point.
const DISTANCE_MATCH_UM: f64 = 0.05;

/// Statistics of one species arriving at its absorbing node from one
/// distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub species: Species,
    pub distance_um: f64,
    /// Fraction of emitted molecules absorbed within the histogram horizon.
    pub p_assim: f64,
    /// Largest share of absorptions falling in one symbol time.
    pub window_mass: f64,
    pub pdf_bin_width_s: f64,
    /// Absorption delays after emission, binned from zero.
    pub pdf_counts: Vec<u64>,
    #[serde(default)]
    pub emitted: u64,
}

impl ChannelStats {
    pub fn absorbed(&self) -> u64 {
        self.pdf_counts.iter().sum()
    }

    pub fn horizon_s(&self) -> f64 {
        self.pdf_bin_width_s * self.pdf_counts.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_assim) {
            return Err(invalid("p_assim", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.window_mass) {
            return Err(invalid("window_mass", "must lie in [0, 1]"));
        }
        if !(self.pdf_bin_width_s > 0.0) {
            return Err(invalid("pdf_bin_width_s", "must be > 0"));
        }
        if self.p_assim > 0.0 && self.absorbed() == 0 {
            return Err(invalid("pdf_counts", "empty histogram with non-zero p_assim"));
        }
        Ok(())
    }
}

/// Largest fraction of the histogram mass inside any run of bins spanning
/// `window_s`.
pub fn window_mass(counts: &[u64], bin_width_s: f64, window_s: f64) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let width = ((window_s / bin_width_s).round() as usize).clamp(1, counts.len());
    let mut running: u64 = counts[..width].iter().sum();
    let mut best = running;
    for i in width..counts.len() {
        running += counts[i];
        running -= counts[i - width];
        best = best.max(running);
    }
    best as f64 / total as f64
}

/// Versioned set of calibrated statistics for both species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub version: u32,
    pub symbol_time_s: f64,
    /// Capture probability per crossing used for each species.
    pub p_capture_s: f64,
    pub p_capture_r: f64,
    pub seed: u64,
    pub entries: Vec<ChannelStats>,
}

impl StatsDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StatsDocument = serde_json::from_str(text)?;
        if doc.version != STATS_SCHEMA_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported channel stats version {}", doc.version),
            ));
        }
        for e in &doc.entries {
            e.validate()?;
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Statistics shipped with the crate for the five reference distances.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../../data/channel_stats.json")).expect("bundled channel statistics are valid")
    }

    pub fn get(&self, species: Species, distance_m: f64) -> Result<&ChannelStats> {
        let d_um = distance_m * 1e6;
        self.entries
            .iter()
            .filter(|e| e.species == species)
            .find(|e| (e.distance_um - d_um).abs() < DISTANCE_MATCH_UM)
            .ok_or(Error::MissingCalibration {
                species: species.to_string(),
                distance_um: d_um,
            })
    }

    pub fn distances_um(&self, species: Species) -> Vec<f64> {
        let mut d: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.species == species)
            .map(|e| e.distance_um)
            .collect();
        d.sort_by(f64::total_cmp);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_mass_picks_densest_run() {
        let counts = [0, 1, 5, 3, 1, 0, 0];
        assert_eq!(window_mass(&counts, 1.0, 2.0), 8.0 / 10.0);
        assert_eq!(window_mass(&counts, 1.0, 100.0), 1.0);
        assert_eq!(window_mass(&[0, 0], 1.0, 1.0), 0.0);
    }

    #[test]
    fn document_roundtrip_and_lookup() {
        let doc = StatsDocument {
            version: STATS_SCHEMA_VERSION,
            symbol_time_s: 10.0,
            p_capture_s: 0.1,
            p_capture_r: 0.2,
            seed: 1,
            entries: vec![ChannelStats {
                species: Species::R,
                distance_um: 26.5,
                p_assim: 0.02,
                window_mass: 0.5,
                pdf_bin_width_s: 0.2,
                pdf_counts: vec![1, 2, 3],
                emitted: 300,
            }],
        };
        let back = StatsDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
        assert!(back.get(Species::R, 26.5e-6).is_ok());
        assert!(matches!(
            back.get(Species::S, 26.5e-6),
            Err(Error::MissingCalibration { .. })
        ));
        assert!(back.get(Species::R, 35.4e-6).is_err());
    }

    #[test]
    fn rejects_other_versions() {
        let text = r#"{"version":99,"symbol_time_s":10,"p_capture_s":0,"p_capture_r":0,"seed":0,"entries":[]}"#;
        assert!(StatsDocument::from_json(text).is_err());
    }
}
