//! Durable, sequence-numbered notifications for the user.
//!
//! Events are appended to a JSON-lines file and survive restarts until
//! acknowledged. Sequence numbers never go backwards, also across
//! acknowledgements.

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::registry::PairId;

/// Renders a pair id the way it appears in events and the HTTP API.
pub fn pair_ref(id: PairId) -> String {
    format!("{id:016x}")
}

pub fn parse_pair_ref(s: &str) -> Option<PairId> {
    if s.is_empty() || s.len() > 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    KeyRequestInbound {
        pair_id: String,
        request_id: String,
        subject: String,
        fingerprint: String,
    },
    KeyInstalled {
        pair_id: String,
        responder: String,
        fingerprint: String,
    },
    Conflict {
        pair_id: String,
        path: String,
        conflict_path: String,
    },
    Quarantine {
        pair_id: String,
        shared_path: String,
        reason: String,
    },
    DeletionBackedUp {
        pair_id: String,
        path: String,
        version: Option<u64>,
    },
    NeedsBackupDecision {
        pair_id: String,
        path: String,
        decision_id: String,
    },
    PairSuspended {
        pair_id: String,
        reason: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::KeyRequestInbound { .. } => "KeyRequestInbound",
            Self::KeyInstalled { .. } => "KeyInstalled",
            Self::Conflict { .. } => "Conflict",
            Self::Quarantine { .. } => "Quarantine",
            Self::DeletionBackedUp { .. } => "DeletionBackedUp",
            Self::NeedsBackupDecision { .. } => "NeedsBackupDecision",
            Self::PairSuspended { .. } => "PairSuspended",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Unix seconds.
    pub at: i64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
struct AckRecord {
    ack: u64,
}

#[derive(Debug, Default)]
pub struct EventLog {
    path: Option<PathBuf>,
    events: Vec<Event>,
    next_seq: u64,
    acked: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self {
            next_seq: 1,
            ..Self::default()
        }
    }

    /// Opens or creates the log at `path`. Unparseable lines are skipped.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let mut log = Self {
            path: Some(path.clone()),
            next_seq: 1,
            ..Self::default()
        };
        match fs::File::open(&path) {
            Ok(f) => {
                for line in BufReader::new(f).lines() {
                    let line = line?;
                    if let Ok(ev) = serde_json::from_str::<Event>(&line) {
                        log.next_seq = log.next_seq.max(ev.seq + 1);
                        log.events.push(ev);
                    } else if let Ok(a) = serde_json::from_str::<AckRecord>(&line) {
                        log.acked = log.acked.max(a.ack);
                        log.next_seq = log.next_seq.max(a.ack + 1);
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        let acked = log.acked;
        log.events.retain(|e| e.seq > acked);
        Ok(log)
    }

    fn append_line(&self, line: &str) -> io::Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    pub fn push(&mut self, at: i64, kind: EventKind) -> u64 {
        let ev = Event {
            seq: self.next_seq,
            at,
            kind,
        };
        self.next_seq += 1;
        if let Err(e) = self.append_line(&serde_json::to_string(&ev).expect("event serializes")) {
            log::warn!("cannot persist event {}: {e}", ev.seq);
        }
        let seq = ev.seq;
        self.events.push(ev);
        seq
    }

    /// Unacknowledged events with `seq > since`.
    pub fn since(&self, since: u64) -> Vec<Event> {
        self.events.iter().filter(|e| e.seq > since).cloned().collect()
    }

    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    /// Drops every event up to and including `upto` and compacts the file.
    pub fn acknowledge(&mut self, upto: u64) -> io::Result<()> {
        let upto = upto.min(self.last_seq());
        if upto <= self.acked {
            return Ok(());
        }
        self.acked = upto;
        self.events.retain(|e| e.seq > upto);
        if let Some(path) = &self.path {
            let mut out = serde_json::to_string(&AckRecord { ack: upto }).expect("serializes");
            out.push('\n');
            for e in &self.events {
                out.push_str(&serde_json::to_string(e).expect("serializes"));
                out.push('\n');
            }
            crate::fsutil::write_atomic(path, out.as_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(n: &str) -> EventKind {
        EventKind::PairSuspended {
            pair_id: pair_ref(1),
            reason: n.into(),
        }
    }

    #[test]
    fn durable_until_acknowledged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::open(&path).unwrap();
        assert_eq!(log.push(10, ev("a")), 1);
        assert_eq!(log.push(11, ev("b")), 2);
        assert_eq!(log.push(12, ev("c")), 3);
        let reopened = EventLog::open(&path).unwrap();
        assert_eq!(reopened.since(0).len(), 3);
        assert_eq!(reopened.since(2)[0].seq, 3);

        log.acknowledge(2).unwrap();
        let mut reopened = EventLog::open(&path).unwrap();
        assert_eq!(reopened.since(0).iter().map(|e| e.seq).collect::<Vec<_>>(), [3]);
        assert_eq!(reopened.push(13, ev("d")), 4);
        reopened.acknowledge(4).unwrap();
        let mut again = EventLog::open(&path).unwrap();
        assert!(again.since(0).is_empty());
        assert_eq!(again.push(14, ev("e")), 5);
    }

    #[test]
    fn json_shape() {
        let e = Event {
            seq: 7,
            at: 0,
            kind: EventKind::Conflict {
                pair_id: pair_ref(255),
                path: "a.txt".into(),
                conflict_path: "a (conflict of bob).txt".into(),
            },
        };
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["kind"], "Conflict");
        assert_eq!(v["payload"]["pair_id"], "00000000000000ff");
        assert_eq!(parse_pair_ref("00000000000000ff"), Some(255));
    }
}
