//! Transmitter state machine.
//!
//! The transmitter idles until it decodes START, then emits a burst of S
//! molecules every emission interval, growing the burst by the initial size
//! each time. HALVE halves the next burst and growth continues from there;
//! STOP or running out of stock returns it to idle.

use serde::{Deserialize, Serialize};

use crate::codec::{CodecEvent, CodecParams, Detector, Message, SyncPhase, TIME_EPS};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxParams {
    /// Size of the first burst and of each increment.
    pub initial_burst: u64,
    /// Seconds between consecutive bursts.
    pub emission_interval: f64,
    /// Stock of S molecules; reaching it ends the session.
    pub max_total: u64,
    pub codec: CodecParams,
}

impl Default for TxParams {
    fn default() -> Self {
        Self {
            initial_burst: 1,
            emission_interval: 0.02,
            max_total: 5_000_000,
            codec: CodecParams::default(),
        }
    }
}

impl TxParams {
    pub fn validate(&self) -> Result<()> {
        if self.initial_burst == 0 {
            return Err(invalid("initial_burst", "must be >= 1"));
        }
        if !(self.emission_interval > 0.0) {
            return Err(invalid("emission_interval", "must be > 0"));
        }
        if self.max_total == 0 {
            return Err(invalid("max_total", "must be > 0"));
        }
        self.codec.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxPhase {
    /// Waiting for a START; the synchronizer is armed.
    Idle,
    SignalDetected,
    Synchronized,
    Emitting,
}

/// Messages the transmitter listens for in `phase`.
pub fn expected_messages(phase: TxPhase) -> &'static [Message] {
    match phase {
        TxPhase::Emitting => &[Message::Halve, Message::Stop],
        _ => &[Message::Start],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum TxEvent {
    Emit { molecules: u64, total: u64 },
    Codec(CodecEvent),
    StateChange { from: TxPhase, to: TxPhase },
    StockExhausted { total: u64 },
}

#[derive(Debug, Clone)]
pub struct TxNode {
    params: TxParams,
    detector: Detector,
    emitting: bool,
    current_burst: u64,
    total_emitted: u64,
    next_emission: f64,
    phase: TxPhase,
}

impl TxNode {
    pub fn new(params: TxParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            detector: Detector::new(params.codec)?,
            params,
            emitting: false,
            current_burst: 0,
            total_emitted: 0,
            next_emission: 0.0,
            phase: TxPhase::Idle,
        })
    }

    pub fn params(&self) -> &TxParams {
        &self.params
    }

    pub fn phase(&self) -> TxPhase {
        self.phase
    }

    /// Size of the next burst while emitting.
    pub fn current_burst(&self) -> u64 {
        self.current_burst
    }

    pub fn total_emitted(&self) -> u64 {
        self.total_emitted
    }

    pub fn received(&self) -> u64 {
        self.detector.total_arrivals()
    }

    fn derive_phase(&self) -> TxPhase {
        if self.emitting {
            return TxPhase::Emitting;
        }
        match self.detector.sync_state().phase {
            SyncPhase::WaitForSync => TxPhase::Idle,
            SyncPhase::SignalDetected => TxPhase::SignalDetected,
            SyncPhase::Synchronized => TxPhase::Synchronized,
        }
    }

    fn update_phase(&mut self, events: &mut Vec<TxEvent>) {
        let to = self.derive_phase();
        if to != self.phase {
            events.push(TxEvent::StateChange { from: self.phase, to });
            self.phase = to;
        }
    }

    fn stop_emitting(&mut self) {
        self.emitting = false;
        self.current_burst = 0;
    }

    /// Advance to clock time `t`. `arrivals` are the R absorptions since the
    /// previous call, in time order. Returns the events of this tick; the
    /// S molecules to release at `t` are the `Emit` events.
    pub fn step(&mut self, t: f64, arrivals: &[f64]) -> Vec<TxEvent> {
        let mut events = Vec::new();
        for &a in arrivals {
            self.detector.push(a);
        }
        let expected = expected_messages(if self.emitting {
            TxPhase::Emitting
        } else {
            TxPhase::Idle
        });
        for ev in self.detector.tick(t, expected) {
            events.push(TxEvent::Codec(ev));
            if let CodecEvent::Decoded { message } = ev {
                match message {
                    Message::Start => {
                        self.emitting = true;
                        self.current_burst = self.params.initial_burst;
                        self.next_emission = t + self.params.emission_interval;
                    }
                    Message::Halve => self.current_burst = (self.current_burst / 2).max(1),
                    Message::Stop => self.stop_emitting(),
                }
            }
        }
        if self.emitting && t + TIME_EPS >= self.next_emission {
            let room = self.params.max_total - self.total_emitted;
            let molecules = self.current_burst.min(room);
            self.total_emitted += molecules;
            self.current_burst += self.params.initial_burst;
            self.next_emission += self.params.emission_interval;
            events.push(TxEvent::Emit {
                molecules,
                total: self.total_emitted,
            });
            if self.total_emitted >= self.params.max_total {
                events.push(TxEvent::StockExhausted {
                    total: self.total_emitted,
                });
                self.stop_emitting();
            }
        }
        self.update_phase(&mut events);
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emitted(events: &[TxEvent]) -> Vec<u64> {
        events
            .iter()
            .filter_map(|e| match e {
                TxEvent::Emit { molecules, .. } => Some(*molecules),
                _ => None,
            })
            .collect()
    }

    /// Drive a node with 1 ms ticks, injecting `burst` R molecules at the
    /// given instants.
    fn drive(node: &mut TxNode, until_ms: u64, bursts: &[(f64, usize)]) -> Vec<(f64, TxEvent)> {
        let mut out = Vec::new();
        for tick in 0..=until_ms {
            let t = tick as f64 * 1e-3;
            let prev = t - 1e-3;
            let arrivals: Vec<f64> = bursts
                .iter()
                .filter(|&&(at, _)| at > prev && at <= t)
                .flat_map(|&(at, n)| std::iter::repeat_n(at, n))
                .collect();
            out.extend(node.step(t, &arrivals).into_iter().map(|e| (t, e)));
        }
        out
    }

    #[test]
    fn expected_sets_partition_the_phases() {
        assert_eq!(expected_messages(TxPhase::Idle), &[Message::Start]);
        assert_eq!(expected_messages(TxPhase::Emitting), &[Message::Halve, Message::Stop]);
        for p in [
            TxPhase::Idle,
            TxPhase::SignalDetected,
            TxPhase::Synchronized,
            TxPhase::Emitting,
        ] {
            assert!(expected_messages(p).len() < 3);
        }
    }

    #[test]
    fn start_triggers_quadratic_emission() {
        let mut node = TxNode::new(TxParams::default()).unwrap();
        // START = 1,1,0 at 1 s and 11 s; decoded at the third read.
        let log = drive(&mut node, 40_000, &[(1.0, 40), (11.0, 40)]);
        let decode_t = log
            .iter()
            .find(|(_, e)| matches!(e, TxEvent::Codec(CodecEvent::Decoded { .. })))
            .map(|(t, _)| *t)
            .unwrap();
        let first_emit = log.iter().find(|(_, e)| matches!(e, TxEvent::Emit { .. })).unwrap().0;
        assert!((first_emit - decode_t - 0.02).abs() < 1e-9);
        let events: Vec<TxEvent> = log.iter().map(|(_, e)| *e).collect();
        let bursts = emitted(&events);
        assert_eq!(&bursts[..10], &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        assert_eq!(bursts[..10].iter().sum::<u64>(), 55);
        assert_eq!(node.phase(), TxPhase::Emitting);
    }

    #[test]
    fn halve_then_linear_growth_and_stop() {
        let params = TxParams {
            max_total: u64::MAX,
            ..TxParams::default()
        };
        let mut node = TxNode::new(params).unwrap();
        // START, then HALVE ("10") and later STOP ("111").
        let bursts = [
            (1.0, 40),
            (11.0, 40),
            (100.0, 40),
            (200.0, 40),
            (210.0, 40),
            (220.0, 40),
        ];
        let log = drive(&mut node, 260_000, &bursts);
        let events: Vec<TxEvent> = log.iter().map(|(_, e)| *e).collect();
        let seq = emitted(&events);
        let drop = seq.windows(2).position(|w| w[1] < w[0]).unwrap();
        let (before, after) = (seq[drop], seq[drop + 1]);
        assert_eq!(after, before.div_ceil(2));
        assert_eq!(seq[drop + 2], after + 1);
        let stop_t = log
            .iter()
            .filter(|(_, e)| matches!(e, TxEvent::Codec(CodecEvent::Decoded { message: Message::Stop })))
            .map(|(t, _)| *t)
            .next()
            .unwrap();
        assert!(log
            .iter()
            .all(|(t, e)| !matches!(e, TxEvent::Emit { .. }) || *t < stop_t));
        assert_eq!(node.phase(), TxPhase::Idle);
        assert_eq!(node.total_emitted(), seq.iter().sum::<u64>());
    }

    #[test]
    fn stock_limit_ends_emission() {
        let params = TxParams {
            max_total: 100,
            ..TxParams::default()
        };
        let mut node = TxNode::new(params).unwrap();
        let log = drive(&mut node, 60_000, &[(1.0, 40), (11.0, 40)]);
        assert_eq!(node.total_emitted(), 100);
        assert_eq!(node.phase(), TxPhase::Idle);
        assert!(log.iter().any(|(_, e)| matches!(e, TxEvent::StockExhausted { .. })));
    }
}
