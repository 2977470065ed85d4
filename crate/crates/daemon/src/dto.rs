//! JSON bodies of the control API. Field names are part of the API contract.

use chrono::{DateTime, SecondsFormat, Utc};
use protbox::engine::{BackupDecision, HiddenEntry, InboundRequest, OutboundRequest};
use protbox::events::Event;
use protbox::registry::QuarantineRecord;
use serde::{Deserialize, Serialize};

pub use protbox::engine::{PairSummary, PolicyView};

/// Unix seconds as ISO-8601 UTC, e.g. `2026-10-15T08:30:00Z`.
pub fn iso8601(secs: i64) -> String {
    DateTime::<Utc>::from_timestamp(secs, 0)
        .unwrap_or_default()
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddPair {
    pub prot: String,
    pub shared: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cipher: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboundView {
    pub id: String,
    pub pair_id: String,
    pub subject: String,
    pub fingerprint: String,
    pub first_seen: String,
}

impl From<InboundRequest> for InboundView {
    fn from(r: InboundRequest) -> Self {
        Self {
            id: r.id,
            pair_id: r.pair_id,
            subject: r.subject,
            fingerprint: r.fingerprint,
            first_seen: iso8601(r.first_seen),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundView {
    pub id: String,
    pub pair_id: String,
    pub shared_path: String,
    pub placed_at: String,
}

impl From<OutboundRequest> for OutboundView {
    fn from(r: OutboundRequest) -> Self {
        Self {
            id: r.id,
            pair_id: r.pair_id,
            shared_path: r.shared_path.display().to_string(),
            placed_at: iso8601(r.placed_at),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionView {
    pub request_id: String,
    pub decision: String,
    /// Name of the response file placed in the shared folder, on approval.
    pub response_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionView {
    pub version: u64,
    pub captured_at: String,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenView {
    pub path: String,
    pub kind: String,
    pub versions: Vec<VersionView>,
}

impl From<HiddenEntry> for HiddenView {
    fn from(h: HiddenEntry) -> Self {
        Self {
            path: h.path,
            kind: format!("{:?}", h.kind).to_lowercase(),
            versions: h
                .versions
                .into_iter()
                .map(|v| VersionView {
                    version: v.version_id,
                    captured_at: iso8601(v.captured_at),
                    length: v.length,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreRequest {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreView {
    pub path: String,
    pub restored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyUpdate {
    /// Cleartext path of an override; the pair default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventView {
    pub seq: u64,
    pub at: String,
    pub kind: String,
    pub payload: serde_json::Value,
}

impl From<Event> for EventView {
    fn from(ev: Event) -> Self {
        let tagged = serde_json::to_value(&ev.kind).expect("event serializes");
        Self {
            seq: ev.seq,
            at: iso8601(ev.at),
            kind: ev.kind.name().to_owned(),
            payload: tagged.get("payload").cloned().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub upto: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupDecisionView {
    pub id: String,
    pub pair_id: String,
    pub path: String,
    pub captured_at: String,
    pub length: u64,
}

impl From<BackupDecision> for BackupDecisionView {
    fn from(d: BackupDecision) -> Self {
        Self {
            id: d.id,
            pair_id: d.pair_id,
            path: d.path,
            captured_at: iso8601(d.captured_at),
            length: d.length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupChoice {
    pub keep: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupResolution {
    pub id: String,
    pub kept: bool,
    pub version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineView {
    pub shared_path: String,
    pub since: String,
    pub reason: String,
}

impl From<QuarantineRecord> for QuarantineView {
    fn from(q: QuarantineRecord) -> Self {
        Self {
            shared_path: q.shared_path,
            since: iso8601(q.since),
            reason: q.reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleView {
    pub pair_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub copied: usize,
    pub deleted: usize,
    pub conflicts: usize,
    pub quarantined: usize,
    pub key_installed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_are_utc_iso8601() {
        assert_eq!(iso8601(0), "1970-01-01T00:00:00Z");
        assert_eq!(iso8601(1_792_000_000), "2026-10-14T17:46:40Z");
    }

    #[test]
    fn events_flatten_kind_and_payload() {
        let ev = Event {
            seq: 4,
            at: 0,
            kind: protbox::events::EventKind::PairSuspended {
                pair_id: "00000000000000ff".into(),
                reason: "read-only".into(),
            },
        };
        let v = serde_json::to_value(EventView::from(ev)).unwrap();
        assert_eq!(v["kind"], "PairSuspended");
        assert_eq!(v["payload"]["reason"], "read-only");
        assert_eq!(v["at"], "1970-01-01T00:00:00Z");
    }
}
