//! Flat `key = value` configuration files.
//!
//! Every key maps to one simulation parameter and carries its unit in the
//! name (`_um`, `_ms`, ...). Lines starting with `#` are comments. Unknown
//! or repeated keys are rejected with the offending line number.

use std::path::Path;

use crate::codec::Message;
use crate::engine::{ChannelMode, SimConfig};
use crate::error::{Error, Result};

/// Every accepted key, in the order of the reference configuration.
pub const KEYS: &[&str] = &[
    "d_um",
    "channel",
    "seed",
    "dt_us",
    "temperature_k",
    "restitution",
    "viscosity",
    "alpha",
    "beta",
    "symbol_time_s",
    "r_rx_um",
    "r_tx_um",
    "receptors_rx",
    "receptors_tx",
    "r_c_rx_nm",
    "r_c_tx_nm",
    "r_r_rx_nm",
    "r_r_tx_nm",
    "t_traff_us",
    "zeta_s",
    "delta_t_ms",
    "timeout_rx_s",
    "zeta_halve",
    "zeta_stop",
    "pattern_start",
    "pattern_halve",
    "pattern_stop",
    "b0_rx",
    "b0_tx",
    "zeta_rtt",
    "t_w_s",
    "c_tx_max",
    "c_a_max",
    "gamma_c1",
    "gamma_c2",
    "sync_divisor",
    "max_sim_time_s",
    "tick_ms",
    "stimulus_at_s",
    "tx_present",
    "p_capture_s",
    "p_capture_r",
    "cull_factor",
];

fn err(line: usize, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        reason: reason.into(),
    }
}

/// Parse `raw` scaled by `10^exp` so that e.g. `2.5` in micrometers gives
/// exactly the literal `2.5e-6`.
fn scaled(raw: &str, exp: i32, line: usize) -> Result<f64> {
    let v: f64 = format!("{raw}e{exp}")
        .parse()
        .map_err(|_| err(line, format!("`{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(err(line, format!("`{raw}` is not finite")));
    }
    Ok(v)
}

fn int<T: std::str::FromStr>(raw: &str, line: usize) -> Result<T> {
    raw.parse()
        .map_err(|_| err(line, format!("`{raw}` is not a non-negative integer")))
}

fn pattern(msg: Message, raw: &str, line: usize) -> Result<()> {
    if raw == msg.codeword() {
        Ok(())
    } else {
        Err(err(
            line,
            format!("{msg} pattern is fixed to {}, got `{raw}`", msg.codeword()),
        ))
    }
}

fn optional_probability(raw: &str, line: usize) -> Result<Option<f64>> {
    if raw == "auto" {
        return Ok(None);
    }
    let p = scaled(raw, 0, line)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(err(line, "capture probability must lie in [0, 1] or be `auto`"));
    }
    Ok(Some(p))
}

fn apply(cfg: &mut SimConfig, key: &str, raw: &str, line: usize) -> Result<()> {
    match key {
        "d_um" => cfg.distance = scaled(raw, -6, line)?,
        "channel" => cfg.channel_mode = raw.parse::<ChannelMode>().map_err(|e| err(line, e.to_string()))?,
        "seed" => cfg.seed = int(raw, line)?,
        "dt_us" => cfg.medium.timestep = scaled(raw, -6, line)?,
        "temperature_k" => cfg.medium.temperature = scaled(raw, 0, line)?,
        "restitution" => cfg.medium.restitution = scaled(raw, 0, line)?,
        "viscosity" => cfg.medium.viscosity = scaled(raw, 0, line)?,
        "alpha" => cfg.rx.growth_order = scaled(raw, 0, line)?,
        "beta" => cfg.rx.tolerance = scaled(raw, 0, line)?,
        "symbol_time_s" => {
            let ts = scaled(raw, 0, line)?;
            cfg.tx.codec.symbol_time = ts;
            cfg.rx.codec.symbol_time = ts;
        }
        "r_rx_um" => cfg.rx_geometry.node_radius = scaled(raw, -6, line)?,
        "r_tx_um" => cfg.tx_geometry.node_radius = scaled(raw, -6, line)?,
        "receptors_rx" => cfg.rx_geometry.receptor_count = int(raw, line)?,
        "receptors_tx" => cfg.tx_geometry.receptor_count = int(raw, line)?,
        "r_c_rx_nm" => cfg.control.molecule_radius = scaled(raw, -9, line)?,
        "r_c_tx_nm" => cfg.payload.molecule_radius = scaled(raw, -9, line)?,
        "r_r_rx_nm" => cfg.rx_geometry.receptor_radius = scaled(raw, -9, line)?,
        "r_r_tx_nm" => cfg.tx_geometry.receptor_radius = scaled(raw, -9, line)?,
        "t_traff_us" => {
            let t = scaled(raw, -6, line)?;
            cfg.rx_geometry.trafficking_time = t;
            cfg.tx_geometry.trafficking_time = t;
        }
        "zeta_s" => {
            let z = int(raw, line)?;
            cfg.tx.codec.detection_threshold = z;
            cfg.rx.codec.detection_threshold = z;
        }
        "delta_t_ms" => cfg.tx.emission_interval = scaled(raw, -3, line)?,
        "timeout_rx_s" => cfg.rx.attempt_timeout = scaled(raw, 0, line)?,
        "zeta_halve" => cfg.rx.halve_threshold = int(raw, line)?,
        "zeta_stop" => cfg.rx.stop_target = int(raw, line)?,
        "pattern_start" => pattern(Message::Start, raw, line)?,
        "pattern_halve" => pattern(Message::Halve, raw, line)?,
        "pattern_stop" => pattern(Message::Stop, raw, line)?,
        "b0_rx" => cfg.rx.initial_burst = int(raw, line)?,
        "b0_tx" => cfg.tx.initial_burst = int(raw, line)?,
        "zeta_rtt" => cfg.rx.rtt_threshold = int(raw, line)?,
        "t_w_s" => cfg.rx.control_period = scaled(raw, 0, line)?,
        "c_tx_max" => cfg.tx.max_total = int(raw, line)?,
        "c_a_max" => cfg.rx.max_attempts = int(raw, line)?,
        "gamma_c1" => cfg.gamma_fit.c1 = scaled(raw, 0, line)?,
        "gamma_c2" => cfg.gamma_fit.c2 = scaled(raw, 0, line)?,
        "sync_divisor" => {
            let n = int(raw, line)?;
            cfg.tx.codec.sync_sample_divisor = n;
            cfg.rx.codec.sync_sample_divisor = n;
        }
        "max_sim_time_s" => cfg.max_sim_time = scaled(raw, 0, line)?,
        "tick_ms" => cfg.tick = scaled(raw, -3, line)?,
        "stimulus_at_s" => cfg.stimulus_at = scaled(raw, 0, line)?,
        "tx_present" => {
            cfg.tx_present = raw
                .parse()
                .map_err(|_| err(line, format!("`{raw}` is not true or false")))?
        }
        "p_capture_s" => cfg.p_capture_s = optional_probability(raw, line)?,
        "p_capture_r" => cfg.p_capture_r = optional_probability(raw, line)?,
        "cull_factor" => cfg.cull_factor = scaled(raw, 0, line)?,
        _ => return Err(err(line, format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// Parse a configuration, starting from the defaults. The result is not
/// validated; call [`SimConfig::validate`] before running it.
pub fn parse(text: &str) -> Result<SimConfig> {
    parse_onto(SimConfig::default(), text)
}

/// Apply the keys in `text` on top of `base`.
pub fn parse_onto(base: SimConfig, text: &str) -> Result<SimConfig> {
    let mut cfg = base;
    let mut seen = std::collections::HashSet::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(err(line, format!("missing value for `{key}`")));
        }
        if KEYS.contains(&key) && !seen.insert(key.to_owned()) {
            return Err(err(line, format!("duplicate key `{key}`")));
        }
        apply(&mut cfg, key, value, line)?;
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<SimConfig> {
    parse(&std::fs::read_to_string(path)?)
}
