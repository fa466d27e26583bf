//! Offline history checker: proves no client ever read a stale value.
//!
//! The property checked is per-key regularity: a served read must return a
//! value that was the key's current value at some instant between the
//! request leaving the client and the reply arriving. Reads concurrent
//! with a write may see either side of it; reads after a write's apply
//! instant must see it (or something newer in their window).
//!
//! Values are identified by the (version, writer) pair embedded in the
//! value bytes; a key with no recorded write is at its preloaded identity
//! (version 0, writer 0xFF).

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::workload::PRELOAD_WRITER;

/// Value identity within one key's history.
pub type ValueId = (u32, u8);

pub const PRELOAD_VALUE: ValueId = (0, PRELOAD_WRITER);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedBy {
    Switch,
    Server,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryEvent {
    /// The store's content for `key_id` changed at `at_ns` (server apply).
    WriteApplied { key_id: u32, version: u32, writer: u8, at_ns: u64 },
    /// A read completed: sent at `send_ns`, reply received at `recv_ns`,
    /// carrying the identified value.
    ReadServed {
        key_id: u32,
        version: u32,
        writer: u8,
        send_ns: u64,
        recv_ns: u64,
        by: ServedBy,
    },
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Violation {
    pub key_id: u32,
    pub got: ValueId,
    pub allowed: Vec<ValueId>,
    pub send_ns: u64,
    pub recv_ns: u64,
    pub by: ServedBy,
    pub detail: String,
}

#[derive(Debug, Default, serde::Serialize)]
pub struct CheckReport {
    pub reads_checked: u64,
    pub writes_indexed: u64,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verify every served read against the write history. The history may
/// arrive in any order; it is indexed by key and time first.
pub fn check(history: &[HistoryEvent]) -> CheckReport {
    let mut writes: HashMap<u32, Vec<(u64, ValueId)>> = HashMap::new();
    let mut report = CheckReport::default();
    for ev in history {
        if let HistoryEvent::WriteApplied { key_id, version, writer, at_ns } = ev {
            writes.entry(*key_id).or_default().push((*at_ns, (*version, *writer)));
            report.writes_indexed += 1;
        }
    }
    for w in writes.values_mut() {
        w.sort_unstable_by_key(|&(at, id)| (at, id));
    }
    let empty: Vec<(u64, ValueId)> = Vec::new();

    for ev in history {
        let HistoryEvent::ReadServed { key_id, version, writer, send_ns, recv_ns, by } = ev
        else {
            continue;
        };
        report.reads_checked += 1;
        let got: ValueId = (*version, *writer);
        let w = writes.get(key_id).unwrap_or(&empty);
        // Current value when the request left the client:
        let before = w.partition_point(|&(at, _)| at <= *send_ns);
        let mut allowed: Vec<ValueId> =
            vec![if before == 0 { PRELOAD_VALUE } else { w[before - 1].1 }];
        // ...plus everything applied inside the read's window.
        for &(at, id) in &w[before..] {
            if at > *recv_ns {
                break;
            }
            allowed.push(id);
        }
        if !allowed.contains(&got) {
            report.violations.push(Violation {
                key_id: *key_id,
                got,
                allowed: allowed.clone(),
                send_ns: *send_ns,
                recv_ns: *recv_ns,
                by: *by,
                detail: format!(
                    "read of key {key_id} served by {:?} returned version {}/writer {} \
                     outside its window [{send_ns}, {recv_ns}]",
                    by, got.0, got.1
                ),
            });
        }
    }
    report
}

/// One JSON object per line.
pub fn save_jsonl(history: &[HistoryEvent], path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ev in history {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn load_jsonl(path: &Path) -> std::io::Result<Vec<HistoryEvent>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut events = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}
