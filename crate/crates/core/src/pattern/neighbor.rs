use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::netmodel::{PortId, PortRef};
use crate::simkernel::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub local: PortRef,
    pub remote: PortRef,
    /// Framed pattern bits of the source side.
    pub pattern: String,
    pub expires_at: SimTime,
}

#[derive(Serialize)]
struct ExportRecord<'a> {
    local: String,
    remote: String,
    pattern: &'a str,
    expires_at: SimTime,
}

/// One node's discovered neighbours, keyed by local port.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeighborTable {
    entries: BTreeMap<PortId, NeighborEntry>,
}

impl NeighborTable {
    pub fn insert(&mut self, e: NeighborEntry) {
        self.entries.insert(e.local.port.clone(), e);
    }

    /// The live entry for `port`; nothing once `now` is past its expiry.
    pub fn get(&self, port: &PortId, now: SimTime) -> Option<&NeighborEntry> {
        self.entries.get(port).filter(|e| now <= e.expires_at)
    }

    /// Drops entries that expired before `now` and returns them.
    pub fn expire(&mut self, now: SimTime) -> Vec<NeighborEntry> {
        let dead: Vec<PortId> = self
            .entries
            .iter()
            .filter(|(_, e)| now > e.expires_at)
            .map(|(k, _)| k.clone())
            .collect();
        dead.into_iter()
            .filter_map(|k| self.entries.remove(&k))
            .collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Writes entries as JSON lines `{local, remote, pattern, expires_at}`.
pub fn write_neighbors<'a, W: Write>(
    entries: impl IntoIterator<Item = &'a NeighborEntry>,
    mut w: W,
) -> io::Result<()> {
    for e in entries {
        let rec = ExportRecord {
            local: e.local.to_string(),
            remote: e.remote.to_string(),
            pattern: &e.pattern,
            expires_at: e.expires_at,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
