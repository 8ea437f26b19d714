//! Parallel execution of independent runs.

use rayon::prelude::*;

use super::{run_with, RunOptions, SimConfig};
use crate::channel::StatsDocument;
use crate::error::{invalid, Result};
use crate::metrics::SessionSummary;

/// Outcome of one sweep entry, in input order.
#[derive(Debug)]
pub struct SweepEntry {
    pub index: usize,
    pub result: Result<SessionSummary>,
}

/// Run every configuration on up to `parallelism` threads. Event logs are
/// not kept. A failing entry does not stop the others.
pub fn sweep(configs: &[SimConfig], stats: &StatsDocument, parallelism: usize) -> Result<Vec<SweepEntry>> {
    if parallelism == 0 {
        return Err(invalid("parallelism", "must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| invalid("parallelism", e.to_string()))?;
    let options = RunOptions {
        record_log: false,
        check_conservation: false,
    };
    Ok(pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(index, cfg)| SweepEntry {
                index,
                result: run_with(cfg, stats, options).map(|out| out.summary),
            })
            .collect()
    }))
}
