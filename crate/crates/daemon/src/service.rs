//! Every control operation, behind one trait with an in-process
//! implementation ([`Service`]) and an HTTP one ([`crate::client::RemoteClient`]).

use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use protbox::crypto::AlgorithmSpec;
use protbox::events::parse_pair_ref;
use protbox::keydist::{Decision, ProtocolId};
use protbox::registry::{BackupPolicy, PairId};
use protbox::Engine;
use tokio::sync::{watch, Notify};

use crate::dto::*;
use crate::error::DaemonError;

pub trait Control {
    fn pairs(&self) -> Result<Vec<PairSummary>, DaemonError>;
    fn add_pair(&self, req: &AddPair) -> Result<PairSummary, DaemonError>;
    fn remove_pair(&self, pair: &str) -> Result<(), DaemonError>;
    fn inbound_requests(&self) -> Result<Vec<InboundView>, DaemonError>;
    fn outbound_requests(&self) -> Result<Vec<OutboundView>, DaemonError>;
    fn decide_request(&self, request: &str, decision: Decision) -> Result<DecisionView, DaemonError>;
    fn hidden(&self, pair: &str) -> Result<Vec<HiddenView>, DaemonError>;
    fn restore(&self, pair: &str, req: &RestoreRequest) -> Result<RestoreView, DaemonError>;
    fn policy(&self, pair: &str) -> Result<PolicyView, DaemonError>;
    fn set_policy(&self, pair: &str, req: &PolicyUpdate) -> Result<PolicyView, DaemonError>;
    fn quarantine(&self, pair: &str) -> Result<Vec<QuarantineView>, DaemonError>;
    fn events(&self, since: u64) -> Result<Vec<EventView>, DaemonError>;
    fn acknowledge_events(&self, upto: u64) -> Result<(), DaemonError>;
    fn backup_decisions(&self) -> Result<Vec<BackupDecisionView>, DaemonError>;
    fn resolve_backup_decision(&self, id: &str, keep: bool) -> Result<BackupResolution, DaemonError>;
    /// Runs one cycle of every pair now.
    fn sync_now(&self) -> Result<Vec<CycleView>, DaemonError>;
}

pub fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::Approve => "approve",
        Decision::Deny => "deny",
    }
}

fn pair_id(s: &str) -> Result<PairId, DaemonError> {
    parse_pair_ref(s).ok_or_else(|| DaemonError::UnknownPair(s.to_owned()))
}

/// The single writer of one registry. State changes go through the engine
/// mutex; `events` carries the latest event sequence number to subscribers.
pub struct Service {
    engine: Mutex<Engine>,
    events: watch::Sender<u64>,
    /// Signalled when pairs change or a cycle should run early.
    pub wake: Notify,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").finish_non_exhaustive()
    }
}

impl Service {
    pub fn new(engine: Engine) -> Self {
        let (events, _) = watch::channel(engine.last_event_seq());
        Self {
            engine: Mutex::new(engine),
            events,
            wake: Notify::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Engine> {
        self.engine.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` with the engine and publishes any new events.
    pub fn with<T>(&self, f: impl FnOnce(&mut Engine) -> Result<T, DaemonError>) -> Result<T, DaemonError> {
        let mut engine = self.lock();
        let result = f(&mut engine);
        let last = engine.last_event_seq();
        drop(engine);
        self.events.send_if_modified(|seq| {
            let changed = *seq != last;
            *seq = last;
            changed
        });
        result
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.events.subscribe()
    }

    pub fn pair_ids(&self) -> Vec<PairId> {
        self.lock().pair_ids()
    }

    /// One cycle of one pair; `None` once the pair no longer exists.
    pub fn cycle(&self, id: PairId) -> Option<Result<protbox::engine::CycleReport, DaemonError>> {
        self.with(|e| {
            if e.registry().pair(id).is_err() {
                return Ok(None);
            }
            Ok(Some(e.run_cycle(id).map_err(DaemonError::from)))
        })
        .unwrap_or_else(|err| Some(Err(err)))
    }

    fn summary(engine: &Engine, id: PairId) -> Result<PairSummary, DaemonError> {
        let wanted = protbox::events::pair_ref(id);
        engine
            .pairs()
            .into_iter()
            .find(|p| p.id == wanted)
            .ok_or_else(|| protbox::EngineError::from(protbox::registry::RegistryError::UnknownPair(id)).into())
    }
}

impl Control for Service {
    fn pairs(&self) -> Result<Vec<PairSummary>, DaemonError> {
        self.with(|e| Ok(e.pairs()))
    }

    fn add_pair(&self, req: &AddPair) -> Result<PairSummary, DaemonError> {
        let spec = match (&req.cipher, &req.mac) {
            (None, None) => AlgorithmSpec::default(),
            (c, m) => {
                let d = AlgorithmSpec::default();
                AlgorithmSpec::parse(
                    c.as_deref().unwrap_or(&d.cipher_spec()),
                    m.as_deref().unwrap_or(&d.mac_spec()),
                )
                .map_err(|e| DaemonError::BadRequest(e.to_string()))?
            }
        };
        let summary = self.with(|e| {
            let id = e.add_pair(Path::new(&req.prot), Path::new(&req.shared), spec)?;
            Self::summary(e, id)
        })?;
        self.wake.notify_waiters();
        Ok(summary)
    }

    fn remove_pair(&self, pair: &str) -> Result<(), DaemonError> {
        let id = pair_id(pair)?;
        self.with(|e| Ok(e.remove_pair(id)?))?;
        self.wake.notify_waiters();
        Ok(())
    }

    fn inbound_requests(&self) -> Result<Vec<InboundView>, DaemonError> {
        self.with(|e| Ok(e.inbound_requests().into_iter().map(Into::into).collect()))
    }

    fn outbound_requests(&self) -> Result<Vec<OutboundView>, DaemonError> {
        self.with(|e| Ok(e.outbound_requests().into_iter().map(Into::into).collect()))
    }

    fn decide_request(&self, request: &str, decision: Decision) -> Result<DecisionView, DaemonError> {
        let response = self.with(|e| Ok(e.decide_request(request, decision)?))?;
        let response_file = match (response, request.parse::<ProtocolId>()) {
            (Some(rid), Ok(req)) => Some(req.response_file_name(&rid)),
            _ => None,
        };
        Ok(DecisionView {
            request_id: request.to_owned(),
            decision: decision_name(decision).to_owned(),
            response_file,
        })
    }

    fn hidden(&self, pair: &str) -> Result<Vec<HiddenView>, DaemonError> {
        let id = pair_id(pair)?;
        self.with(|e| Ok(e.hidden(id)?.into_iter().map(Into::into).collect()))
    }

    fn restore(&self, pair: &str, req: &RestoreRequest) -> Result<RestoreView, DaemonError> {
        let id = pair_id(pair)?;
        self.with(|e| {
            e.restore(id, &req.path, req.version)?;
            let prot = e.registry().pair(id).map_err(protbox::EngineError::from)?.prot_path.clone();
            Ok(RestoreView {
                path: req.path.clone(),
                restored: protbox::fsutil::join_rel(&prot, &req.path).exists(),
            })
        })
    }

    fn policy(&self, pair: &str) -> Result<PolicyView, DaemonError> {
        let id = pair_id(pair)?;
        self.with(|e| Ok(e.policy(id)?))
    }

    fn set_policy(&self, pair: &str, req: &PolicyUpdate) -> Result<PolicyView, DaemonError> {
        let id = pair_id(pair)?;
        let policy = BackupPolicy::parse(&req.policy).map_err(protbox::EngineError::from)?;
        self.with(|e| {
            e.set_policy(id, req.path.as_deref(), policy)?;
            Ok(e.policy(id)?)
        })
    }

    fn quarantine(&self, pair: &str) -> Result<Vec<QuarantineView>, DaemonError> {
        let id = pair_id(pair)?;
        self.with(|e| Ok(e.quarantined(id)?.into_iter().map(Into::into).collect()))
    }

    fn events(&self, since: u64) -> Result<Vec<EventView>, DaemonError> {
        self.with(|e| Ok(e.events_since(since).into_iter().map(Into::into).collect()))
    }

    fn acknowledge_events(&self, upto: u64) -> Result<(), DaemonError> {
        self.with(|e| Ok(e.acknowledge_events(upto)?))
    }

    fn backup_decisions(&self) -> Result<Vec<BackupDecisionView>, DaemonError> {
        self.with(|e| Ok(e.backup_decisions().into_iter().map(Into::into).collect()))
    }

    fn resolve_backup_decision(&self, id: &str, keep: bool) -> Result<BackupResolution, DaemonError> {
        let version = self.with(|e| Ok(e.resolve_backup_decision(id, keep)?))?;
        Ok(BackupResolution {
            id: id.to_owned(),
            kept: keep,
            version,
        })
    }

    fn sync_now(&self) -> Result<Vec<CycleView>, DaemonError> {
        self.with(|e| {
            Ok(e.run_all()
                .into_iter()
                .map(|(id, r)| {
                    let pair_id = protbox::events::pair_ref(id);
                    match r {
                        Ok(r) => CycleView {
                            pair_id,
                            ok: true,
                            error: None,
                            copied: r.sync.copied,
                            deleted: r.sync.deleted,
                            conflicts: r.sync.conflicts,
                            quarantined: r.sync.quarantined,
                            key_installed: r.key_installed,
                        },
                        Err(err) => CycleView {
                            pair_id,
                            ok: false,
                            error: Some(format!("{}: {err}", err.code())),
                            copied: 0,
                            deleted: 0,
                            conflicts: 0,
                            quarantined: 0,
                            key_installed: false,
                        },
                    }
                })
                .collect())
        })
    }
}
