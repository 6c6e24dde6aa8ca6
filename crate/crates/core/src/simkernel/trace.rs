//! JSON-lines event trace.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: SimTime,
    pub kind: String,
    pub actor: String,
    pub payload: Value,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    enabled: bool,
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            records: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(&mut self, t: SimTime, kind: &str, actor: &str, payload: Value) {
        if self.enabled {
            self.records.push(TraceRecord {
                t,
                kind: kind.to_string(),
                actor: actor.to_string(),
                payload,
            });
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
