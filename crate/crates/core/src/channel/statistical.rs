//! Fast channel: a binomial thinning of the burst followed by independent
//! delays drawn from the calibrated arrival histogram.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::stats::ChannelStats;
use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct StatisticalChannel {
    p_assim: f64,
    bin_width: f64,
    /// Normalised cumulative histogram; last entry is 1.
    cdf: Vec<f64>,
}

impl StatisticalChannel {
    pub fn new(stats: &ChannelStats) -> Result<Self> {
        stats.validate()?;
        let total = stats.absorbed();
        if total == 0 && stats.p_assim > 0.0 {
            return Err(invalid("pdf_counts", "histogram is empty"));
        }
        let mut acc = 0u64;
        let cdf = stats
            .pdf_counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / total.max(1) as f64
            })
            .collect();
        Ok(Self {
            p_assim: stats.p_assim,
            bin_width: stats.pdf_bin_width_s,
            cdf,
        })
    }

    pub fn p_assim(&self) -> f64 {
        self.p_assim
    }

    /// One absorption delay: pick a bin by its mass, then a uniform offset in it.
    pub fn sample_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let bin = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        (bin as f64 + rng.random::<f64>()) * self.bin_width
    }

    /// CDF of the delay distribution at `t` (piecewise linear inside bins).
    pub fn delay_cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let pos = t / self.bin_width;
        let bin = pos.floor() as usize;
        if bin >= self.cdf.len() {
            return 1.0;
        }
        let lo = if bin == 0 { 0.0 } else { self.cdf[bin - 1] };
        lo + (self.cdf[bin] - lo) * (pos - bin as f64)
    }

    /// Absorption delays (seconds after emission) for a burst of `q`
    /// molecules, unsorted.
    pub fn transmit<R: Rng + ?Sized>(&self, q: u64, rng: &mut R) -> Vec<f64> {
        if q == 0 || self.p_assim == 0.0 {
            return Vec::new();
        }
        let k = Binomial::new(q, self.p_assim)
            .expect("p_assim validated to [0,1]")
            .sample(rng);
        (0..k).map(|_| self.sample_delay(rng)).collect()
    }
}
