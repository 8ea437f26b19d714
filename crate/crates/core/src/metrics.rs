//! Session summaries, performance figures and their tabular exports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{assimilation_count, Census, GammaFit, NodeGeometry};
use crate::codec::Message;
use crate::error::Result;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const AGGREGATE_SCHEMA_VERSION: u32 = 1;

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// The transmitter decoded STOP and the receiver finished sending it.
    Completed,
    /// No START got through in any ranging attempt.
    SetupFailed,
    /// The transmitter ran out of stock before decoding STOP.
    StockExhausted,
    /// The simulated time limit was hit first.
    Timeout,
}

/// Everything the metrics need from one run.
///
/// Times are in seconds on the simulation clock. `delivery_time_s` runs
/// from the start of the successful ranging attempt to the STOP decode at
/// the transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub schema_version: u32,
    pub distance_um: f64,
    pub seed: u64,
    pub channel_mode: String,
    pub status: RunStatus,
    pub stop_target: u64,
    /// S molecules absorbed by the receiver over the whole run.
    pub delivered: u64,
    /// S molecules emitted by the transmitter.
    pub c_tx: u64,
    /// R molecules emitted by the receiver.
    pub r_emitted: u64,
    pub attempts: u32,
    pub halve_count: u32,
    pub rx_initial_burst: u64,
    pub rtt_s: Option<f64>,
    pub established_at_s: Option<f64>,
    pub attempt_start_s: Option<f64>,
    pub stop_sent_s: Option<f64>,
    pub stop_decoded_s: Option<f64>,
    pub delivery_time_s: Option<f64>,
    pub end_time_s: f64,
    pub symbols: BTreeMap<String, usize>,
    pub codewords: BTreeMap<String, String>,
    pub census_s: Census,
    pub census_r: Census,
    pub warnings: Vec<String>,
}

impl SessionSummary {
    pub fn codeword_table() -> (BTreeMap<String, usize>, BTreeMap<String, String>) {
        let symbols = Message::ALL.iter().map(|m| (m.to_string(), m.symbol_count())).collect();
        let codewords = Message::ALL
            .iter()
            .map(|m| (m.to_string(), m.codeword().to_owned()))
            .collect();
        (symbols, codewords)
    }

    fn symbols_of(&self, msg: Message) -> u64 {
        self.symbols
            .get(&msg.to_string())
            .copied()
            .unwrap_or(msg.symbol_count()) as u64
    }
}

/// Control overhead: R molecules spent on ranging, STOP and HALVE messages
/// per S molecule emitted.
pub fn overhead(b0_rx: u64, attempts: u32, n_halve: u32, c_tx: u64, p_start: u64, p_halve: u64, p_stop: u64) -> f64 {
    let ca = u64::from(attempts);
    let ranging: u64 = (1..=ca).map(|i| i * (p_start - 1)).sum();
    let control = p_stop * ca + u64::from(n_halve) * ca * (p_halve - 1);
    (b0_rx * (ranging + control)) as f64 / c_tx as f64
}

/// Model parameters the normalized efficiency refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricModel {
    pub receiver: NodeGeometry,
    pub fit: GammaFit,
}

impl Default for MetricModel {
    fn default() -> Self {
        Self {
            receiver: NodeGeometry::receiver(),
            fit: GammaFit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub distance_um: f64,
    pub seed: u64,
    /// False unless the session ended through a decoded STOP.
    pub complete: bool,
    pub throughput: f64,
    pub efficiency: f64,
    pub normalized_efficiency: f64,
    pub overhead: f64,
    /// Overhead recomputed from the receiver's own emission count.
    pub overhead_logged: f64,
    pub delivery_time: f64,
    pub halve_count: u32,
    pub attempts: u32,
    pub total_emitted_s: u64,
    pub total_emitted_r: u64,
    pub delivered: u64,
}

/// Performance figures of one run. Incomplete sessions get `complete =
/// false`; figures that need the STOP decode time are then NaN.
pub fn compute_metrics(summary: &SessionSummary, model: &MetricModel) -> Result<RunMetrics> {
    let target = summary.stop_target as f64;
    let complete = summary.status == RunStatus::Completed;
    let delivery_time = match (complete, summary.delivery_time_s) {
        (true, Some(td)) => td,
        _ => f64::NAN,
    };
    let c_tx = summary.c_tx;
    let (efficiency, normalized_efficiency, oh, oh_logged) = if c_tx > 0 {
        let absorbable = assimilation_count(
            model.receiver.receptor_count,
            summary.distance_um * 1e-6,
            c_tx as f64,
            &model.receiver,
            &model.fit,
        )?;
        (
            target / c_tx as f64,
            target / absorbable,
            overhead(
                summary.rx_initial_burst,
                summary.attempts,
                summary.halve_count,
                c_tx,
                summary.symbols_of(Message::Start),
                summary.symbols_of(Message::Halve),
                summary.symbols_of(Message::Stop),
            ),
            summary.r_emitted as f64 / c_tx as f64,
        )
    } else {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    };
    Ok(RunMetrics {
        distance_um: summary.distance_um,
        seed: summary.seed,
        complete,
        throughput: target / delivery_time,
        efficiency,
        normalized_efficiency,
        overhead: oh,
        overhead_logged: oh_logged,
        delivery_time,
        halve_count: summary.halve_count,
        attempts: summary.attempts,
        total_emitted_s: c_tx,
        total_emitted_r: summary.r_emitted,
        delivered: summary.delivered,
    })
}

/// Column order of the metrics table.
pub const CSV_HEADER: [&str; 10] = [
    "d_um", "seed", "thr", "rho", "rho_n", "oh", "T_D", "c_TX", "C_a", "n_halve",
];

/// Write one row per run, sorted by distance then seed.
pub fn write_csv<W: Write>(out: W, metrics: &[RunMetrics]) -> Result<()> {
    let mut rows: Vec<&RunMetrics> = metrics.iter().collect();
    rows.sort_by(|a, b| a.distance_um.total_cmp(&b.distance_um).then(a.seed.cmp(&b.seed)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for m in rows {
        w.write_record([
            m.distance_um.to_string(),
            m.seed.to_string(),
            m.throughput.to_string(),
            m.efficiency.to_string(),
            m.normalized_efficiency.to_string(),
            m.overhead.to_string(),
            m.delivery_time.to_string(),
            m.total_emitted_s.to_string(),
            m.attempts.to_string(),
            m.halve_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub thr: f64,
    pub rho: f64,
    pub rho_n: f64,
    pub oh: f64,
    pub t_d: f64,
    pub c_tx: f64,
    pub c_a: f64,
    pub n_halve: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceAggregate {
    pub d_um: f64,
    pub runs: usize,
    pub complete_runs: usize,
    /// Over complete runs only.
    pub mean: MetricStats,
    /// Sample standard deviation over complete runs (0 for a single run).
    pub std: MetricStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub distances: Vec<DistanceAggregate>,
}

fn fields(m: &RunMetrics) -> [f64; 8] {
    [
        m.throughput,
        m.efficiency,
        m.normalized_efficiency,
        m.overhead,
        m.delivery_time,
        m.total_emitted_s as f64,
        f64::from(m.attempts),
        f64::from(m.halve_count),
    ]
}

fn to_stats(v: [f64; 8]) -> MetricStats {
    MetricStats {
        thr: v[0],
        rho: v[1],
        rho_n: v[2],
        oh: v[3],
        t_d: v[4],
        c_tx: v[5],
        c_a: v[6],
        n_halve: v[7],
    }
}

/// Per-distance means and standard deviations.
pub fn aggregate(metrics: &[RunMetrics]) -> Aggregate {
    let mut groups: BTreeMap<i64, Vec<&RunMetrics>> = BTreeMap::new();
    for m in metrics {
        groups
            .entry((m.distance_um * 1000.0).round() as i64)
            .or_default()
            .push(m);
    }
    let distances = groups
        .into_values()
        .map(|runs| {
            let done: Vec<[f64; 8]> = runs.iter().filter(|m| m.complete).map(|m| fields(m)).collect();
            let n = done.len() as f64;
            let mut mean = [f64::NAN; 8];
            let mut std = [f64::NAN; 8];
            if !done.is_empty() {
                for k in 0..8 {
                    mean[k] = done.iter().map(|f| f[k]).sum::<f64>() / n;
                    std[k] = if done.len() > 1 {
                        (done.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                }
            }
            DistanceAggregate {
                d_um: runs[0].distance_um,
                runs: runs.len(),
                complete_runs: done.len(),
                mean: to_stats(mean),
                std: to_stats(std),
            }
        })
        .collect();
    Aggregate {
        schema_version: AGGREGATE_SCHEMA_VERSION,
        distances,
    }
}
