//! Time-ordered event log, exported as newline-delimited JSON.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeId {
    Tx,
    Rx,
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t_s: f64,
    pub node: NodeId,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub data: Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an event serialized as `{"kind": .., "data": ..}`.
    pub fn push<E: Serialize>(&mut self, t_s: f64, node: NodeId, event: &E) {
        debug_assert!(self.records.last().is_none_or(|r| r.t_s <= t_s));
        let (kind, data) = match serde_json::to_value(event).expect("events serialize") {
            Value::Object(mut m) => {
                let kind = match m.remove("kind") {
                    Some(Value::String(s)) => s,
                    _ => String::new(),
                };
                (kind, m.remove("data").unwrap_or(Value::Null))
            }
            Value::String(s) => (s, Value::Null),
            other => (String::new(), other),
        };
        self.records.push(LogRecord { t_s, node, kind, data });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}
