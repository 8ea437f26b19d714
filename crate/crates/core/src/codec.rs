//! On-off keying symbol layer shared by both nodes.
//!
//! A symbol 1 is a burst of molecules, a 0 is silence, each lasting one
//! symbol time. The receiving side synchronizes on the first burst it
//! detects and then reads one symbol per symbol time, matching the growing
//! pattern against the messages it currently expects.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Slack used when comparing scheduled instants against the engine clock.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Message {
    Start,
    Halve,
    Stop,
}

impl Message {
    pub const ALL: [Message; 3] = [Message::Start, Message::Halve, Message::Stop];

    pub fn codeword(self) -> &'static str {
        match self {
            Message::Start => "110",
            Message::Halve => "10",
            Message::Stop => "111",
        }
    }

    /// Number of symbols the message occupies on the channel.
    pub fn symbol_count(self) -> usize {
        self.codeword().len()
    }

    /// Number of 1-symbols, i.e. bursts actually emitted.
    pub fn ones(self) -> usize {
        self.codeword().bytes().filter(|&b| b == b'1').count()
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Message::Start => "START",
            Message::Halve => "HALVE",
            Message::Stop => "STOP",
        })
    }
}

impl FromStr for Message {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "START" => Ok(Message::Start),
            "HALVE" => Ok(Message::Halve),
            "STOP" => Ok(Message::Stop),
            _ => Err(Error::UnknownMessage(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecParams {
    /// Symbol time in seconds.
    pub symbol_time: f64,
    /// Molecules needed inside one symbol time to read a 1.
    pub detection_threshold: u64,
    /// The synchronizer samples every `symbol_time / sync_sample_divisor`.
    pub sync_sample_divisor: u32,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self {
            symbol_time: 10.0,
            detection_threshold: 34,
            sync_sample_divisor: 20,
        }
    }
}

impl CodecParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_time > 0.0) {
            return Err(invalid("symbol_time", "must be > 0"));
        }
        if self.detection_threshold == 0 {
            return Err(invalid("detection_threshold", "must be >= 1"));
        }
        if self.sync_sample_divisor == 0 {
            return Err(invalid("sync_sample_divisor", "must be >= 1"));
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        self.symbol_time / f64::from(self.sync_sample_divisor)
    }
}

/// Check that a set of messages can be told apart by the prefix rule: every
/// codeword starts with 1 and none is a prefix of another.
pub fn check_message_set(expected: &[Message]) -> Result<()> {
    for (i, a) in expected.iter().enumerate() {
        if !a.codeword().starts_with('1') {
            return Err(invalid("codewords", format!("{a} does not start with 1")));
        }
        for b in &expected[i + 1..] {
            if a != b && (a.codeword().starts_with(b.codeword()) || b.codeword().starts_with(a.codeword())) {
                return Err(invalid("codewords", format!("{a} and {b} share a prefix")));
            }
        }
    }
    Ok(())
}

/// Emission schedule of `msg`: `(offset in seconds, molecules)` per symbol.
pub fn encode_message(msg: Message, burst: u64, symbol_time: f64) -> Result<Vec<(f64, u64)>> {
    if burst == 0 {
        return Err(invalid("burst", "must be > 0"));
    }
    Ok(msg
        .codeword()
        .bytes()
        .enumerate()
        .map(|(k, b)| (k as f64 * symbol_time, if b == b'1' { burst } else { 0 }))
        .collect())
}

/// Number of arrivals in `(t - window, t]`; `log` must be sorted.
pub fn window_count(log: &[f64], t: f64, window: f64) -> u64 {
    let lo = log.partition_point(|&x| x <= t - window);
    let hi = log.partition_point(|&x| x <= t);
    hi.saturating_sub(lo) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncPhase {
    WaitForSync,
    SignalDetected,
    Synchronized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncState {
    pub phase: SyncPhase,
    /// First instant the window count reached the threshold.
    pub t_star: f64,
    pub t_sync: f64,
    pub n_prev: u64,
}

impl Default for SyncState {
    fn default() -> Self {
        Self {
            phase: SyncPhase::WaitForSync,
            t_star: 0.0,
            t_sync: 0.0,
            n_prev: 0,
        }
    }
}

/// Advance the synchronizer with the window count `k` observed at `t`.
/// Returns true on the transition to `Synchronized`.
///
/// While searching, a strictly larger count moves the synchronization
/// instant forward; an equal or smaller one ends the search, and so does
/// the end of the symbol time that began at `t_star`.
pub fn sync_step(state: &mut SyncState, t: f64, k: u64, params: &CodecParams) -> bool {
    match state.phase {
        SyncPhase::WaitForSync => {
            if k >= params.detection_threshold {
                *state = SyncState {
                    phase: SyncPhase::SignalDetected,
                    t_star: t,
                    t_sync: t,
                    n_prev: k,
                };
            }
            false
        }
        SyncPhase::SignalDetected => {
            if t - state.t_star >= params.symbol_time - TIME_EPS || k <= state.n_prev {
                state.phase = SyncPhase::Synchronized;
                true
            } else {
                state.t_sync = t;
                state.n_prev = k;
                false
            }
        }
        SyncPhase::Synchronized => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeOutcome {
    Pending,
    Decoded(Message),
    /// The pattern stopped matching every expected codeword.
    Mismatch,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderState {
    pub pattern: String,
}

/// Append one symbol and match the pattern against `expected`. The state
/// is cleared on a full match or on a mismatch.
pub fn decode_step(state: &mut DecoderState, bit: bool, expected: &[Message]) -> DecodeOutcome {
    state.pattern.push(if bit { '1' } else { '0' });
    if let Some(&msg) = expected.iter().find(|m| m.codeword() == state.pattern) {
        state.pattern.clear();
        return DecodeOutcome::Decoded(msg);
    }
    if expected.iter().any(|m| m.codeword().starts_with(&state.pattern)) {
        DecodeOutcome::Pending
    } else {
        state.pattern.clear();
        DecodeOutcome::Mismatch
    }
}

/// What the detector reports back for one clock tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum CodecEvent {
    SignalDetected { t_star: f64, count: u64 },
    Synchronized { t_star: f64, t_sync: f64 },
    Symbol { read_at: f64, count: u64, bit: bool },
    Decoded { message: Message },
    SyncLost { pattern_len: usize },
}

/// Synchronizer plus decoder over a stream of absorption times.
///
/// After a message is decoded or the pattern is lost, the detector waits
/// for the window count to fall below the threshold once before it looks
/// for a new burst, so the tail of the last symbol cannot trigger a
/// spurious synchronization.
#[derive(Debug, Clone)]
pub struct Detector {
    params: CodecParams,
    arrivals: VecDeque<f64>,
    sync: SyncState,
    decoder: DecoderState,
    armed: bool,
    samples_taken: u32,
    reads_taken: u32,
    total_arrivals: u64,
}

impl Detector {
    pub fn new(params: CodecParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            arrivals: VecDeque::new(),
            sync: SyncState::default(),
            decoder: DecoderState::default(),
            armed: true,
            samples_taken: 0,
            reads_taken: 0,
            total_arrivals: 0,
        })
    }

    pub fn params(&self) -> &CodecParams {
        &self.params
    }

    pub fn sync_state(&self) -> &SyncState {
        &self.sync
    }

    pub fn pattern(&self) -> &str {
        &self.decoder.pattern
    }

    pub fn total_arrivals(&self) -> u64 {
        self.total_arrivals
    }

    /// Record an absorption. Times must be non-decreasing.
    pub fn push(&mut self, t: f64) {
        debug_assert!(self.arrivals.back().is_none_or(|&b| b <= t));
        self.arrivals.push_back(t);
        self.total_arrivals += 1;
    }

    /// Arrivals in `(t - T_S, t]`.
    pub fn count_at(&self, t: f64) -> u64 {
        let lo = self.arrivals.partition_point(|&x| x <= t - self.params.symbol_time);
        let hi = self.arrivals.partition_point(|&x| x <= t);
        hi.saturating_sub(lo) as u64
    }

    fn reset(&mut self) {
        self.sync = SyncState::default();
        self.decoder = DecoderState::default();
        self.armed = false;
        self.samples_taken = 0;
        self.reads_taken = 0;
    }

    /// Run the detector at clock time `t`; all arrivals up to `t` must have
    /// been pushed. `expected` is the message set valid for the caller's
    /// current state.
    pub fn tick(&mut self, t: f64, expected: &[Message]) -> Vec<CodecEvent> {
        let ts = self.params.symbol_time;
        let mut events = Vec::new();
        match self.sync.phase {
            SyncPhase::WaitForSync => {
                let k = self.count_at(t);
                if !self.armed {
                    self.armed = k < self.params.detection_threshold;
                } else if !expected.is_empty() {
                    sync_step(&mut self.sync, t, k, &self.params);
                    if self.sync.phase == SyncPhase::SignalDetected {
                        self.samples_taken = 0;
                        events.push(CodecEvent::SignalDetected { t_star: t, count: k });
                    }
                }
            }
            SyncPhase::SignalDetected => {
                let next = self.sync.t_star + f64::from(self.samples_taken + 1) * self.params.sample_period();
                if t + TIME_EPS >= next {
                    self.samples_taken += 1;
                    let k = self.count_at(next);
                    if sync_step(&mut self.sync, next, k, &self.params) {
                        events.push(CodecEvent::Synchronized {
                            t_star: self.sync.t_star,
                            t_sync: self.sync.t_sync,
                        });
                        self.reads_taken = 0;
                        // The burst that triggered synchronization is the first 1.
                        self.apply_symbol(true, self.sync.t_sync, self.sync.n_prev, expected, &mut events);
                    }
                }
            }
            SyncPhase::Synchronized => {
                let read_at = self.sync.t_sync + f64::from(self.reads_taken + 1) * ts;
                if t + TIME_EPS >= read_at {
                    self.reads_taken += 1;
                    let k = self.count_at(read_at);
                    let bit = k >= self.params.detection_threshold;
                    self.apply_symbol(bit, read_at, k, expected, &mut events);
                }
            }
        }
        self.prune(t);
        events
    }

    fn apply_symbol(
        &mut self,
        bit: bool,
        read_at: f64,
        count: u64,
        expected: &[Message],
        events: &mut Vec<CodecEvent>,
    ) {
        events.push(CodecEvent::Symbol { read_at, count, bit });
        match decode_step(&mut self.decoder, bit, expected) {
            DecodeOutcome::Pending => {}
            DecodeOutcome::Decoded(message) => {
                events.push(CodecEvent::Decoded { message });
                self.reset();
            }
            DecodeOutcome::Mismatch => {
                let pattern_len = self.reads_taken as usize + 1;
                events.push(CodecEvent::SyncLost { pattern_len });
                self.reset();
            }
        }
    }

    fn prune(&mut self, t: f64) {
        // Reads look at most one symbol time back from an instant no earlier
        // than the previous tick.
        let horizon = t - 2.0 * self.params.symbol_time;
        while self.arrivals.front().is_some_and(|&x| x <= horizon) {
            self.arrivals.pop_front();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: CodecParams = CodecParams {
        symbol_time: 10.0,
        detection_threshold: 34,
        sync_sample_divisor: 20,
    };

    #[test]
    fn codewords_and_counts() {
        assert_eq!(Message::Start.codeword(), "110");
        assert_eq!(Message::Halve.symbol_count(), 2);
        assert_eq!(Message::Stop.ones(), 3);
        assert!(Message::ALL.iter().all(|m| m.codeword().starts_with('1')));
        assert!(check_message_set(&[Message::Halve, Message::Stop]).is_ok());
        assert!(check_message_set(&[Message::Start]).is_ok());
        assert_eq!("stop".parse::<Message>().unwrap(), Message::Stop);
        assert!(matches!("ack".parse::<Message>(), Err(Error::UnknownMessage(_))));
    }

    #[test]
    fn encoding_schedules() {
        assert_eq!(
            encode_message(Message::Start, 1000, 10.0).unwrap(),
            vec![(0.0, 1000), (10.0, 1000), (20.0, 0)]
        );
        assert_eq!(
            encode_message(Message::Halve, 2000, 10.0).unwrap(),
            vec![(0.0, 2000), (10.0, 0)]
        );
        let energy: u64 = encode_message(Message::Stop, 700, 10.0)
            .unwrap()
            .iter()
            .map(|e| e.1)
            .sum();
        assert_eq!(energy, 3 * 700);
        assert!(encode_message(Message::Stop, 0, 10.0).is_err());
    }

    #[test]
    fn window_is_half_open() {
        assert_eq!(window_count(&[], 5.0, 10.0), 0);
        let log = [0.0, 1.0, 5.0, 10.0];
        assert_eq!(window_count(&log, 10.0, 10.0), 3);
        let log: Vec<f64> = (0..34).map(|i| 1.0 + i as f64 * 0.1).collect();
        assert!(window_count(&log, 10.0, 10.0) >= P.detection_threshold);
    }

    #[test]
    fn sync_never_triggers_below_threshold() {
        let mut s = SyncState::default();
        for i in 0..100 {
            assert!(!sync_step(&mut s, i as f64 * 0.5, 33, &P));
        }
        assert_eq!(s.phase, SyncPhase::WaitForSync);
    }

    #[test]
    fn rising_count_syncs_at_last_sample_before_expiry() {
        let mut s = SyncState::default();
        sync_step(&mut s, 100.0, 34, &P);
        let mut done = None;
        for j in 1..=20 {
            let t = 100.0 + j as f64 * 0.5;
            if sync_step(&mut s, t, 34 + j, &P) {
                done = Some(t);
                break;
            }
        }
        assert_eq!(done, Some(110.0));
        assert_eq!(s.t_sync, 109.5);
        assert!(s.t_sync - s.t_star <= P.symbol_time);
    }

    #[test]
    fn peak_then_fall_syncs_at_peak() {
        let mut s = SyncState::default();
        sync_step(&mut s, 0.0, 40, &P);
        assert!(!sync_step(&mut s, 0.5, 45, &P));
        assert!(!sync_step(&mut s, 1.0, 50, &P));
        assert!(sync_step(&mut s, 1.5, 48, &P));
        assert_eq!((s.t_sync, s.n_prev), (1.0, 50));
    }

    #[test]
    fn equal_count_ends_search() {
        let mut s = SyncState::default();
        sync_step(&mut s, 0.0, 40, &P);
        assert!(sync_step(&mut s, 0.5, 40, &P));
        assert_eq!(s.t_sync, 0.0);
    }

    #[test]
    fn prefix_decoding() {
        let exp = [Message::Halve, Message::Stop];
        let mut d = DecoderState::default();
        assert_eq!(decode_step(&mut d, true, &exp), DecodeOutcome::Pending);
        assert_eq!(decode_step(&mut d, false, &exp), DecodeOutcome::Decoded(Message::Halve));
        for _ in 0..2 {
            decode_step(&mut d, true, &exp);
        }
        assert_eq!(decode_step(&mut d, true, &exp), DecodeOutcome::Decoded(Message::Stop));

        let mut d = DecoderState::default();
        let exp = [Message::Start];
        decode_step(&mut d, true, &exp);
        decode_step(&mut d, true, &exp);
        assert_eq!(decode_step(&mut d, true, &exp), DecodeOutcome::Mismatch);
        assert!(d.pattern.is_empty());
        assert_eq!(decode_step(&mut d, false, &exp), DecodeOutcome::Mismatch);
    }

    fn burst(det: &mut Detector, at: f64, n: usize) {
        for i in 0..n {
            det.push(at + i as f64 * 1e-3);
        }
    }

    fn run(
        det: &mut Detector,
        until_ms: u64,
        expected: &[Message],
        mut feed: impl FnMut(&mut Detector, f64),
    ) -> Vec<CodecEvent> {
        let mut out = Vec::new();
        for tick in 0..=until_ms {
            let t = tick as f64 * 1e-3;
            feed(det, t);
            out.extend(det.tick(t, expected));
        }
        out
    }

    #[test]
    fn detector_decodes_start_from_clean_bursts() {
        let mut det = Detector::new(P).unwrap();
        let mut pending = vec![(12.0, 50usize), (22.0, 50)];
        let events = run(&mut det, 60_000, &[Message::Start], |d, t| {
            pending.retain(|&(at, n)| {
                if at <= t {
                    burst(d, at, n);
                    false
                } else {
                    true
                }
            });
        });
        let decoded: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                CodecEvent::Decoded { message } => Some(*message),
                _ => None,
            })
            .collect();
        assert_eq!(decoded, vec![Message::Start]);
        let sync = events.iter().find_map(|e| match e {
            CodecEvent::Synchronized { t_sync, .. } => Some(*t_sync),
            _ => None,
        });
        // Detection at the 34th molecule, one refresh when the full burst is
        // seen half a sample period later, then a tie ends the search.
        assert!((sync.unwrap() - 12.533).abs() < 1e-9, "{sync:?}");
    }

    #[test]
    fn detector_stays_quiet_after_decode_until_rearmed() {
        let mut det = Detector::new(P).unwrap();
        let mut fed = false;
        let events = run(&mut det, 80_000, &[Message::Halve, Message::Stop], |d, t| {
            if !fed && t >= 1.0 {
                // Three bursts in a row, then silence: exactly one STOP.
                burst(d, 1.0, 40);
                burst(d, 11.0, 40);
                burst(d, 21.0, 40);
                fed = true;
            }
        });
        let n = events
            .iter()
            .filter(|e| matches!(e, CodecEvent::Decoded { .. }))
            .count();
        assert_eq!(n, 1);
    }
}
