//! Receiver and controller state machine.
//!
//! On an external stimulus the receiver sends START with growing bursts
//! until S molecules come back (ranging), estimates the round trip time
//! from the first arrivals, then watches the cumulative count and throttles
//! the transmitter with HALVE or ends the session with STOP.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_message, CodecParams, Message, TIME_EPS};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RxParams {
    /// START burst on the first attempt and increment per retry.
    pub initial_burst: u64,
    pub max_attempts: u32,
    /// Seconds to wait after the last START slot before retrying.
    pub attempt_timeout: f64,
    /// S arrivals that confirm the connection.
    pub rtt_threshold: u64,
    /// Arrivals needed before any flow-control estimate is trusted.
    pub halve_threshold: u64,
    /// S molecules to collect.
    pub stop_target: u64,
    /// Period of the flow-control check.
    pub control_period: f64,
    /// Tolerance on the quadratic estimate, in (0, 1].
    pub tolerance: f64,
    /// Exponent of the growth law.
    pub growth_order: f64,
    pub codec: CodecParams,
}

impl Default for RxParams {
    fn default() -> Self {
        Self {
            initial_burst: 1000,
            max_attempts: 20,
            attempt_timeout: 54.0,
            rtt_threshold: 5,
            halve_threshold: 250,
            stop_target: 10_000,
            control_period: 0.2,
            tolerance: 0.95,
            growth_order: 2.0,
            codec: CodecParams::default(),
        }
    }
}

impl RxParams {
    pub fn validate(&self) -> Result<()> {
        if self.initial_burst == 0 {
            return Err(invalid("initial_burst", "must be >= 1"));
        }
        if self.max_attempts == 0 {
            return Err(invalid("max_attempts", "must be >= 1"));
        }
        if !(self.attempt_timeout > 0.0) {
            return Err(invalid("attempt_timeout", "must be > 0"));
        }
        if !(self.rtt_threshold <= self.halve_threshold && self.halve_threshold <= self.stop_target) {
            return Err(invalid("thresholds", "need rtt <= halve <= stop"));
        }
        if self.rtt_threshold == 0 {
            return Err(invalid("rtt_threshold", "must be >= 1"));
        }
        if !(self.control_period > 0.0) {
            return Err(invalid("control_period", "must be > 0"));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1.0) {
            return Err(invalid("tolerance", "must lie in (0, 1]"));
        }
        if !(self.growth_order > 0.0) {
            return Err(invalid("growth_order", "must be > 0"));
        }
        self.codec.validate()
    }

    /// Seconds from the start of a message to the start of its last slot.
    fn lead(&self, msg: Message) -> f64 {
        (msg.symbol_count() - 1) as f64 * self.codec.symbol_time
    }

    fn duration(&self, msg: Message) -> f64 {
        msg.symbol_count() as f64 * self.codec.symbol_time
    }
}

/// Round trip time from the last START slot to the arrival that confirmed
/// the connection.
pub fn estimate_rtt(start_tx_end: f64, t_threshold: f64) -> Result<f64> {
    if t_threshold > start_tx_end {
        Ok(t_threshold - start_tx_end)
    } else {
        Err(Error::Ordering {
            earlier: start_tx_end,
            later: t_threshold,
        })
    }
}

/// Quadratic-growth flow controller run while the connection is up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowControl {
    pub rtt: f64,
    /// Instant the current estimation window starts.
    pub anchor_time: f64,
    /// Cumulative count at `anchor_time`.
    pub anchor_count: u64,
    /// Set after a HALVE until the anchor is re-captured at `anchor_time`.
    pub anchor_pending: bool,
    /// Growth coefficient from the last tick that sent nothing.
    pub prev_coeff: Option<f64>,
    pub halve_count: u32,
}

impl FlowControl {
    pub fn new(established_at: f64, count: u64, rtt: f64) -> Self {
        Self {
            rtt,
            anchor_time: established_at,
            anchor_count: count,
            anchor_pending: false,
            prev_coeff: None,
            halve_count: 0,
        }
    }

    /// One control decision at `t` with cumulative count `n`.
    ///
    /// No command is issued while a HALVE is still taking effect. STOP wins
    /// when the target is reached or is projected to be reached once a STOP
    /// sent now takes effect; the projection is only trusted beyond the
    /// halve threshold. HALVE fires when the count falls short of the
    /// previous estimate by more than the tolerance.
    pub fn tick(&mut self, t: f64, n: u64, p: &RxParams) -> Option<Message> {
        if self.anchor_pending {
            if t + TIME_EPS >= self.anchor_time {
                self.anchor_time = t;
                self.anchor_count = n;
                self.anchor_pending = false;
            }
            return None;
        }
        let elapsed = t - self.anchor_time;
        if elapsed <= TIME_EPS {
            return None;
        }
        if n >= p.stop_target {
            return Some(Message::Stop);
        }
        let gained = n.saturating_sub(self.anchor_count) as f64;
        let a = gained / elapsed.powf(p.growth_order);
        if n >= p.halve_threshold {
            let t_new = t + p.lead(Message::Stop) + self.rtt;
            let projected =
                self.anchor_count as f64 + p.tolerance * a * (t_new - self.anchor_time).powf(p.growth_order);
            if projected >= p.stop_target as f64 {
                return Some(Message::Stop);
            }
            if let Some(prev) = self.prev_coeff {
                let expected = self.anchor_count as f64 + prev * elapsed.powf(p.growth_order);
                if (n as f64) < p.tolerance * expected {
                    self.halve_count += 1;
                    self.prev_coeff = None;
                    self.anchor_pending = true;
                    // Wait for the HALVE to reach the transmitter and its
                    // effect to come back, and never overlap our own slots.
                    self.anchor_time = (t + p.lead(Message::Halve) + self.rtt).max(t + p.duration(Message::Halve));
                    return Some(Message::Halve);
                }
            }
        }
        self.prev_coeff = Some(a);
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxPhase {
    Idle,
    ConnectionSetup,
    ConnectionEstablished,
    ConnectionRelease,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    /// STOP fully transmitted.
    Released,
    /// Every ranging attempt timed out.
    SetupFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum RxEvent {
    Emit { molecules: u64, message: Message },
    Send { message: Message, burst: u64 },
    AttemptTimeout { attempt: u32, received: u64 },
    Established { at: f64, rtt: f64 },
    StateChange { from: RxPhase, to: RxPhase },
}

#[derive(Debug, Clone)]
pub struct RxNode {
    params: RxParams,
    phase: RxPhase,
    session_started: bool,
    attempt: u32,
    current_burst: u64,
    attempt_started: f64,
    attempt_deadline: f64,
    total_assimilated: u64,
    first_arrival: Option<f64>,
    established_at: Option<f64>,
    control: Option<FlowControl>,
    next_control: f64,
    release_end: f64,
    stop_sent_at: Option<f64>,
    pending: VecDeque<(f64, u64, Message)>,
    total_emitted: u64,
    outcome: Option<SessionOutcome>,
}

impl RxNode {
    pub fn new(params: RxParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            phase: RxPhase::Idle,
            session_started: false,
            attempt: 0,
            current_burst: 0,
            attempt_started: 0.0,
            attempt_deadline: 0.0,
            total_assimilated: 0,
            first_arrival: None,
            established_at: None,
            control: None,
            next_control: 0.0,
            release_end: 0.0,
            stop_sent_at: None,
            pending: VecDeque::new(),
            total_emitted: 0,
            outcome: None,
        })
    }

    pub fn params(&self) -> &RxParams {
        &self.params
    }

    pub fn phase(&self) -> RxPhase {
        self.phase
    }

    pub fn attempt(&self) -> u32 {
        self.attempt
    }

    pub fn current_burst(&self) -> u64 {
        self.current_burst
    }

    /// S molecules absorbed since the session started.
    pub fn total_assimilated(&self) -> u64 {
        self.total_assimilated
    }

    pub fn first_arrival(&self) -> Option<f64> {
        self.first_arrival
    }

    pub fn established_at(&self) -> Option<f64> {
        self.established_at
    }

    pub fn rtt(&self) -> Option<f64> {
        self.control.as_ref().map(|c| c.rtt)
    }

    pub fn halve_count(&self) -> u32 {
        self.control.as_ref().map_or(0, |c| c.halve_count)
    }

    pub fn flow_control(&self) -> Option<&FlowControl> {
        self.control.as_ref()
    }

    /// Start of the ranging attempt that is running or that succeeded.
    pub fn attempt_started(&self) -> f64 {
        self.attempt_started
    }

    pub fn stop_sent_at(&self) -> Option<f64> {
        self.stop_sent_at
    }

    pub fn total_emitted(&self) -> u64 {
        self.total_emitted
    }

    pub fn outcome(&self) -> Option<SessionOutcome> {
        self.outcome
    }

    /// True once the session has started and the receiver is idle again.
    pub fn finished(&self) -> bool {
        self.outcome.is_some() && self.phase == RxPhase::Idle && self.pending.is_empty()
    }

    fn set_phase(&mut self, to: RxPhase, events: &mut Vec<RxEvent>) {
        if to != self.phase {
            events.push(RxEvent::StateChange { from: self.phase, to });
            self.phase = to;
        }
    }

    fn send(&mut self, t: f64, message: Message, events: &mut Vec<RxEvent>) {
        let schedule = encode_message(message, self.current_burst, self.params.codec.symbol_time)
            .expect("burst is positive while a session runs");
        self.pending.extend(
            schedule
                .into_iter()
                .filter(|s| s.1 > 0)
                .map(|(dt, n)| (t + dt, n, message)),
        );
        events.push(RxEvent::Send {
            message,
            burst: self.current_burst,
        });
    }

    fn begin_attempt(&mut self, t: f64, events: &mut Vec<RxEvent>) {
        self.attempt += 1;
        self.current_burst = u64::from(self.attempt) * self.params.initial_burst;
        self.attempt_started = t;
        self.attempt_deadline = t + self.params.duration(Message::Start) + self.params.attempt_timeout;
        self.send(t, Message::Start, events);
    }

    fn establish(&mut self, at: f64, events: &mut Vec<RxEvent>) {
        let reference = self.attempt_started + self.params.lead(Message::Start);
        // Arrivals answering an earlier attempt can precede the current
        // START; measure from its first slot then.
        let rtt = estimate_rtt(reference, at).unwrap_or(at - self.attempt_started);
        self.established_at = Some(at);
        self.control = Some(FlowControl::new(at, self.total_assimilated, rtt));
        events.push(RxEvent::Established { at, rtt });
    }

    /// Advance to clock time `t`. `arrivals` are the S absorptions since the
    /// previous call, in time order; `stimulus` requests a session.
    pub fn step(&mut self, t: f64, arrivals: &[f64], stimulus: bool) -> Vec<RxEvent> {
        let mut events = Vec::new();

        if self.session_started {
            for &a in arrivals {
                self.total_assimilated += 1;
                self.first_arrival.get_or_insert(a);
                if self.phase == RxPhase::ConnectionSetup && self.total_assimilated >= self.params.rtt_threshold {
                    self.establish(a, &mut events);
                    self.next_control = t + self.params.control_period;
                    self.set_phase(RxPhase::ConnectionEstablished, &mut events);
                }
            }
        }

        if stimulus && !self.session_started {
            self.session_started = true;
            self.set_phase(RxPhase::ConnectionSetup, &mut events);
            self.begin_attempt(t, &mut events);
        }

        match self.phase {
            RxPhase::ConnectionSetup if t + TIME_EPS >= self.attempt_deadline => {
                events.push(RxEvent::AttemptTimeout {
                    attempt: self.attempt,
                    received: self.total_assimilated,
                });
                if self.attempt >= self.params.max_attempts {
                    self.outcome = Some(SessionOutcome::SetupFailed);
                    self.set_phase(RxPhase::Idle, &mut events);
                } else {
                    self.begin_attempt(t, &mut events);
                }
            }
            RxPhase::ConnectionEstablished if t + TIME_EPS >= self.next_control => {
                self.next_control += self.params.control_period;
                let n = self.total_assimilated;
                let params = self.params;
                let cmd = self.control.as_mut().and_then(|c| c.tick(t, n, &params));
                match cmd {
                    Some(Message::Stop) => {
                        self.send(t, Message::Stop, &mut events);
                        self.stop_sent_at = Some(t);
                        self.release_end = t + self.params.duration(Message::Stop);
                        self.set_phase(RxPhase::ConnectionRelease, &mut events);
                    }
                    Some(Message::Halve) => self.send(t, Message::Halve, &mut events),
                    _ => {}
                }
            }
            RxPhase::ConnectionRelease if t + TIME_EPS >= self.release_end => {
                self.outcome = Some(SessionOutcome::Released);
                self.set_phase(RxPhase::Idle, &mut events);
            }
            _ => {}
        }

        while let Some(&(at, molecules, message)) = self.pending.front() {
            if at > t + TIME_EPS {
                break;
            }
            self.pending.pop_front();
            self.total_emitted += molecules;
            events.push(RxEvent::Emit { molecules, message });
        }
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rtt_is_a_difference() {
        assert_eq!(estimate_rtt(100.0, 131.0).unwrap(), 31.0);
        assert!(matches!(estimate_rtt(100.0, 99.0), Err(Error::Ordering { .. })));
    }

    #[test]
    fn parameter_checks() {
        assert!(RxParams::default().validate().is_ok());
        let bad = RxParams {
            tolerance: 1.5,
            ..RxParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = RxParams {
            halve_threshold: 20_000,
            ..RxParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn target_reached_stops_immediately() {
        let p = RxParams::default();
        let mut fc = FlowControl::new(0.0, 5, 20.0);
        assert_eq!(fc.tick(1.0, p.stop_target, &p), Some(Message::Stop));
    }

    #[test]
    fn steady_quadratic_growth_sends_nothing() {
        let p = RxParams {
            stop_target: 1_000_000,
            ..RxParams::default()
        };
        let a0 = 30.0;
        let mut fc = FlowControl::new(0.0, 0, 20.0);
        for k in 1..200 {
            let t = k as f64 * 0.2;
            let n = (a0 * t * t).round() as u64;
            assert_eq!(fc.tick(t, n, &p), None, "t={t}");
            assert!((fc.prev_coeff.unwrap() - a0).abs() / a0 < 0.2);
        }
    }

    #[test]
    fn saturation_fires_one_halve_and_suspends() {
        let p = RxParams {
            stop_target: 1_000_000,
            ..RxParams::default()
        };
        let mut fc = FlowControl::new(0.0, 0, 20.0);
        let mut commands = Vec::new();
        for k in 1..400 {
            let t = k as f64 * 0.2;
            // Quadratic up to 300 molecules, flat afterwards.
            let n = (30.0 * t * t).min(300.0).round() as u64;
            if let Some(c) = fc.tick(t, n, &p) {
                commands.push((t, c));
            }
        }
        assert_eq!(commands.len(), 1, "{commands:?}");
        let (t_halve, cmd) = commands[0];
        assert_eq!(cmd, Message::Halve);
        assert_eq!(fc.halve_count, 1);
        // Estimation resumes one symbol time plus the RTT later.
        assert!((fc.anchor_time - (t_halve + 10.0 + 20.0)).abs() < 0.2 + 1e-9);
    }

    #[test]
    fn projection_stops_before_target() {
        let p = RxParams::default();
        let mut fc = FlowControl::new(0.0, 5, 5.0);
        let mut stop = None;
        for k in 1..1000 {
            let t = k as f64 * 0.2;
            let n = 5 + (30.0 * t * t) as u64;
            if let Some(c) = fc.tick(t, n, &p) {
                stop = Some((c, n));
                break;
            }
        }
        let (cmd, n) = stop.unwrap();
        assert_eq!(cmd, Message::Stop);
        assert!(n < p.stop_target && n >= p.halve_threshold);
    }

    fn drive(rx: &mut RxNode, until_ms: u64, arrivals: &[f64]) -> Vec<(f64, RxEvent)> {
        let mut out = Vec::new();
        for tick in 0..=until_ms {
            let t = tick as f64 * 1e-3;
            let prev = t - 1e-3;
            let now: Vec<f64> = arrivals.iter().copied().filter(|&a| a > prev && a <= t).collect();
            out.extend(rx.step(t, &now, tick == 0).into_iter().map(|e| (t, e)));
        }
        out
    }

    #[test]
    fn absent_peer_exhausts_ranging() {
        let p = RxParams {
            max_attempts: 4,
            ..RxParams::default()
        };
        let mut rx = RxNode::new(p).unwrap();
        let per_attempt = 3.0 * 10.0 + 54.0;
        let log = drive(&mut rx, (per_attempt * 4.0 * 1000.0) as u64 + 10, &[]);
        assert_eq!(rx.outcome(), Some(SessionOutcome::SetupFailed));
        assert_eq!(rx.phase(), RxPhase::Idle);
        // Two bursts per START, burst = attempt * 1000.
        assert_eq!(rx.total_emitted(), 1000 * 2 * (1 + 2 + 3 + 4));
        let bursts: Vec<u64> = log
            .iter()
            .filter_map(|(_, e)| match e {
                RxEvent::Send { burst, .. } => Some(*burst),
                _ => None,
            })
            .collect();
        assert_eq!(bursts, vec![1000, 2000, 3000, 4000]);
    }

    #[test]
    fn arrivals_establish_connection_and_measure_rtt() {
        let mut rx = RxNode::new(RxParams::default()).unwrap();
        let arrivals = [25.0, 26.0, 27.0, 28.0, 31.0, 32.0];
        let log = drive(&mut rx, 40_000, &arrivals);
        assert_eq!(rx.phase(), RxPhase::ConnectionEstablished);
        assert_eq!(rx.established_at(), Some(31.0));
        assert!((rx.rtt().unwrap() - 11.0).abs() < 1e-9);
        assert_eq!(rx.attempt(), 1);
        assert!(log.iter().any(|(_, e)| matches!(e, RxEvent::Established { .. })));
    }

    #[test]
    fn release_follows_stop() {
        let p = RxParams {
            stop_target: 10,
            halve_threshold: 10,
            ..RxParams::default()
        };
        let mut rx = RxNode::new(p).unwrap();
        let arrivals: Vec<f64> = (0..20).map(|i| 25.0 + i as f64 * 0.1).collect();
        drive(&mut rx, 80_000, &arrivals);
        assert_eq!(rx.outcome(), Some(SessionOutcome::Released));
        assert!(rx.finished());
        let stop = rx.stop_sent_at().unwrap();
        assert!(stop > 25.5 && stop < 27.5, "{stop}");
        // START (2 bursts) and STOP (3 bursts) at 1000 molecules each.
        assert_eq!(rx.total_emitted(), 5000);
    }
}
