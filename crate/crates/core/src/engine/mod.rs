//! Fixed-step simulation kernel wiring the two nodes through a channel.
//!
//! Each tick delivers the absorptions that happened since the previous
//! tick, steps the receiver and then the transmitter, and hands their
//! emissions to the channel. A run is sequential and fully determined by
//! its configuration and seed.

mod channel;
pub mod log;
pub mod sweep;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    CalibrationSetup, GammaFit, MediumParams, NodeGeometry, ParticleEngine, Species, SpeciesSpec, StatisticalChannel,
    StatsDocument, StepScheme,
};
use crate::codec::TIME_EPS;
use crate::codec::{CodecEvent, Message};
use crate::error::{invalid, Result};
use crate::metrics::{RunStatus, SessionSummary, SUMMARY_SCHEMA_VERSION};
use crate::rx_node::{RxEvent, RxNode, RxParams, SessionOutcome};
use crate::tx_node::{TxEvent, TxNode, TxParams, TxPhase};

use self::channel::{ChannelSim, ParticleSim, StatisticalSim};
pub use self::log::{EventLog, LogRecord, NodeId};
pub use self::sweep::{sweep, SweepEntry};

/// The five reference distances, in micrometers.
pub const REFERENCE_DISTANCES_UM: [f64; 5] = [26.5, 35.4, 44.2, 53.0, 61.9];

/// Supported distance range; runs outside it carry a warning.
pub const SUPPORTED_DISTANCE_M: (f64, f64) = (20e-6, 70e-6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Particle,
    Statistical,
}

impl std::fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelMode::Particle => "particle",
            ChannelMode::Statistical => "statistical",
        })
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "particle" => Ok(ChannelMode::Particle),
            "statistical" => Ok(ChannelMode::Statistical),
            _ => Err(invalid(
                "channel",
                format!("expected particle or statistical, got `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Center-to-center distance in meters.
    pub distance: f64,
    pub channel_mode: ChannelMode,
    pub medium: MediumParams,
    pub payload: SpeciesSpec,
    pub control: SpeciesSpec,
    pub tx_geometry: NodeGeometry,
    pub rx_geometry: NodeGeometry,
    pub gamma_fit: GammaFit,
    pub tx: TxParams,
    pub rx: RxParams,
    pub seed: u64,
    pub max_sim_time: f64,
    pub tick: f64,
    /// Time of the external stimulus that starts the session.
    pub stimulus_at: f64,
    /// Without a transmitter the receiver's START goes unanswered.
    pub tx_present: bool,
    /// Per-crossing capture probabilities in particle mode; the calibrated
    /// values of the channel statistics are used when unset.
    pub p_capture_s: Option<f64>,
    pub p_capture_r: Option<f64>,
    /// Particle mode cull radius as a multiple of the distance.
    pub cull_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            distance: 26.5e-6,
            channel_mode: ChannelMode::Statistical,
            medium: MediumParams::default(),
            payload: SpeciesSpec::payload(),
            control: SpeciesSpec::control(),
            tx_geometry: NodeGeometry::transmitter(),
            rx_geometry: NodeGeometry::receiver(),
            gamma_fit: GammaFit::default(),
            tx: TxParams::default(),
            rx: RxParams::default(),
            seed: 1,
            max_sim_time: 3600.0,
            tick: 1e-3,
            stimulus_at: 0.0,
            tx_present: true,
            p_capture_s: None,
            p_capture_r: None,
            cull_factor: 20.0,
        }
    }
}

fn is_multiple(x: f64, step: f64) -> bool {
    let k = (x / step).round();
    k >= 1.0 && (x - k * step).abs() <= 1e-9 * x.max(1.0)
}

impl SimConfig {
    /// Check the configuration; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.medium.validate()?;
        self.tx_geometry.validate()?;
        self.rx_geometry.validate()?;
        self.tx.validate()?;
        self.rx.validate()?;
        if self.tx.codec != self.rx.codec {
            return Err(invalid("codec", "both nodes must share the symbol parameters"));
        }
        if !(self.distance > self.tx_geometry.node_radius + self.rx_geometry.node_radius) {
            return Err(invalid("distance", "nodes overlap"));
        }
        if !(self.tick > 0.0) {
            return Err(invalid("tick", "must be > 0"));
        }
        let c = &self.tx.codec;
        for (name, x) in [
            ("symbol_time", c.symbol_time),
            ("sync sample period", c.sample_period()),
            ("emission_interval", self.tx.emission_interval),
            ("control_period", self.rx.control_period),
        ] {
            if !is_multiple(x, self.tick) {
                return Err(invalid("tick", format!("{name} = {x} s is not a multiple of the tick")));
            }
        }
        let ranging = self.rx.attempt_timeout * f64::from(self.rx.max_attempts);
        if !(self.max_sim_time > ranging) {
            return Err(invalid(
                "max_sim_time",
                format!("must exceed the ranging budget {ranging} s"),
            ));
        }
        if !(self.cull_factor > 1.0) {
            return Err(invalid("cull_factor", "must be > 1"));
        }
        let mut warnings = Vec::new();
        let (lo, hi) = SUPPORTED_DISTANCE_M;
        if self.distance < lo || self.distance > hi {
            warnings.push(format!(
                "distance {:.1} um is outside the supported 20-70 um range",
                self.distance * 1e6
            ));
        }
        Ok(warnings)
    }

    /// Calibration setup matching this configuration's physics.
    pub fn calibration_setup(&self) -> CalibrationSetup {
        CalibrationSetup {
            medium: self.medium,
            payload: self.payload,
            control: self.control,
            tx: self.tx_geometry,
            rx: self.rx_geometry,
            fit: self.gamma_fit,
            symbol_time: self.tx.codec.symbol_time,
            cull_factor: self.cull_factor,
            scheme: StepScheme::Accelerated,
            ..CalibrationSetup::default()
        }
    }
}

/// Log and summary of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: EventLog,
    pub summary: SessionSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
enum ChannelEvent {
    Absorb { species: Species, count: usize },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record the event log (summaries are always produced).
    pub record_log: bool,
    /// Verify molecule conservation on every tick.
    pub check_conservation: bool,
}

impl RunOptions {
    pub fn full() -> Self {
        Self {
            record_log: true,
            check_conservation: false,
        }
    }
}

/// Run one session with the event log recorded.
pub fn run(config: &SimConfig, stats: &StatsDocument) -> Result<RunOutput> {
    run_with(config, stats, RunOptions::full())
}

pub fn run_with(config: &SimConfig, stats: &StatsDocument, options: RunOptions) -> Result<RunOutput> {
    let warnings = config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut channel = match config.channel_mode {
        ChannelMode::Statistical => {
            let s = StatisticalChannel::new(stats.get(Species::S, config.distance)?)?;
            let r = StatisticalChannel::new(stats.get(Species::R, config.distance)?)?;
            ChannelSim::Statistical(StatisticalSim::new(s, r, config.max_sim_time))
        }
        ChannelMode::Particle => {
            let ps = config.p_capture_s.unwrap_or(stats.p_capture_s);
            let pr = config.p_capture_r.unwrap_or(stats.p_capture_r);
            for (name, p) in [("p_capture_s", ps), ("p_capture_r", pr)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(name, "must lie in [0, 1]"));
                }
            }
            let scene = config.calibration_setup().scene(config.distance, ps, pr)?;
            ChannelSim::Particle(ParticleSim::new(ParticleEngine::new(scene)))
        }
    };
    let mut tx = TxNode::new(config.tx)?;
    let mut rx = RxNode::new(config.rx)?;
    let mut log = EventLog::new();
    let mut stop_decoded: Option<f64> = None;
    let mut stock_exhausted = false;
    let mut delivered: u64 = 0;
    let mut s_arrivals = Vec::new();
    let mut r_arrivals = Vec::new();

    let mut k: u64 = 0;
    let (status, end_time) = loop {
        let t = k as f64 * config.tick;
        s_arrivals.clear();
        r_arrivals.clear();
        for a in channel.advance(t, &mut rng) {
            match a.species {
                Species::S => s_arrivals.push(a.time),
                Species::R => r_arrivals.push(a.time),
            }
        }
        delivered += s_arrivals.len() as u64;
        if options.record_log {
            for (species, list) in [(Species::S, &s_arrivals), (Species::R, &r_arrivals)] {
                if !list.is_empty() {
                    log.push(
                        t,
                        NodeId::Channel,
                        &ChannelEvent::Absorb {
                            species,
                            count: list.len(),
                        },
                    );
                }
            }
        }

        let stimulus = t + TIME_EPS >= config.stimulus_at;
        for ev in rx.step(t, &s_arrivals, stimulus) {
            if let RxEvent::Emit { molecules, .. } = ev {
                channel.emit(t, Species::R, molecules, &mut rng);
            }
            if options.record_log {
                log.push(t, NodeId::Rx, &ev);
            }
        }

        if config.tx_present {
            for ev in tx.step(t, &r_arrivals) {
                match ev {
                    TxEvent::Emit { molecules, .. } => channel.emit(t, Species::S, molecules, &mut rng),
                    TxEvent::Codec(CodecEvent::Decoded { message: Message::Stop }) => {
                        stop_decoded.get_or_insert(t);
                    }
                    TxEvent::StockExhausted { .. } => stock_exhausted = true,
                    _ => {}
                }
                if options.record_log {
                    match ev {
                        TxEvent::Codec(c) => log.push(t, NodeId::Tx, &c),
                        other => log.push(t, NodeId::Tx, &other),
                    }
                }
            }
        }

        if options.check_conservation {
            for species in [Species::S, Species::R] {
                let c = channel.census(species);
                if c.absorbed + c.in_flight + c.culled != c.emitted {
                    return Err(invalid("conservation", format!("{species} census {c:?} at t = {t}")));
                }
            }
        }

        let tx_idle = tx.phase() != TxPhase::Emitting;
        if rx.finished() && tx_idle {
            let status = match rx.outcome() {
                Some(SessionOutcome::SetupFailed) => RunStatus::SetupFailed,
                _ if stop_decoded.is_some() => RunStatus::Completed,
                _ if stock_exhausted => RunStatus::StockExhausted,
                // Released but the transmitter never started emitting.
                _ => RunStatus::SetupFailed,
            };
            break (status, t);
        }
        if stock_exhausted && tx_idle && stop_decoded.is_none() {
            break (RunStatus::StockExhausted, t);
        }
        if t + TIME_EPS >= config.max_sim_time {
            break (RunStatus::Timeout, t);
        }
        k += 1;
    };

    let (symbols, codewords) = SessionSummary::codeword_table();
    let established = rx.established_at().is_some();
    let summary = SessionSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        distance_um: (config.distance * 1e9).round() / 1e3,
        seed: config.seed,
        channel_mode: config.channel_mode.to_string(),
        status,
        stop_target: config.rx.stop_target,
        delivered,
        c_tx: tx.total_emitted(),
        r_emitted: rx.total_emitted(),
        attempts: rx.attempt(),
        halve_count: rx.halve_count(),
        rx_initial_burst: config.rx.initial_burst,
        rtt_s: rx.rtt(),
        established_at_s: rx.established_at(),
        attempt_start_s: established.then(|| rx.attempt_started()),
        stop_sent_s: rx.stop_sent_at(),
        stop_decoded_s: stop_decoded,
        delivery_time_s: match (established, stop_decoded) {
            (true, Some(t)) => Some(t - rx.attempt_started()),
            _ => None,
        },
        end_time_s: end_time,
        symbols,
        codewords,
        census_s: channel.census(Species::S),
        census_r: channel.census(Species::R),
        warnings,
    };
    Ok(RunOutput { log, summary })
}
