//! One user instance: the sealed registry, every pair's sync cycle, the key
//! distribution workflow and the event log.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::crypto::{AlgorithmSpec, RegistryKey, SealMode, DEFAULT_KDF_ITERATIONS};
use crate::events::{pair_ref, Event, EventKind, EventLog};
use crate::fsutil::NodeKind;
use crate::identity::{ChainValidator, IdentityToken};
use crate::keydist::{
    build_response, cleanup_orphans, place_request, place_response, process_response, remove_request_files,
    scan_folder, verify_request, Decision, Kdkp, KeydistError, RequestId, RequestSigner, ResponseId, VerifiedRequest,
};
use crate::registry::{
    BackupPolicy, BackupStore, BackupVersion, PairId, PairState, PendingRequest, QuarantineRecord, Registry,
    RegistryError, RegistryStore, Settings,
};
use crate::sync::{run_pair_cycle, SyncContext, SyncError, SyncReport};

pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Keydist(#[from] KeydistError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("a registry already exists at {0}")]
    AlreadyInitialized(PathBuf),
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("unknown backup decision {0}")]
    UnknownDecision(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl EngineError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Registry(RegistryError::WrongPassword) => "WrongPassword",
            Self::Registry(RegistryError::UnknownPair(_)) => "UnknownPair",
            Self::Registry(RegistryError::UnknownEntry(_)) => "UnknownEntry",
            Self::Registry(RegistryError::NoSuchVersion) => "NoSuchVersion",
            Self::Registry(RegistryError::NothingToRestore) => "NothingToRestore",
            Self::Registry(RegistryError::InvalidPolicy(_)) => "InvalidPolicy",
            Self::Registry(RegistryError::NotADirectory(_)) => "NotADirectory",
            Self::Registry(RegistryError::NestedPaths) => "NestedPaths",
            Self::Registry(RegistryError::SharedFolderAlreadyPaired) => "SharedFolderAlreadyPaired",
            Self::Registry(RegistryError::UnknownDecision(_)) | Self::UnknownDecision(_) => "UnknownDecision",
            Self::Registry(_) => "RegistryError",
            Self::Keydist(KeydistError::FolderReadOnly) | Self::Sync(SyncError::FolderReadOnly) => "FolderReadOnly",
            Self::Keydist(KeydistError::Identity(crate::identity::IdentityError::SigningRefused(_))) => "SigningRefused",
            Self::Keydist(KeydistError::Identity(_)) => "IdentityError",
            Self::Keydist(_) => "KeydistError",
            Self::Sync(SyncError::FolderUnreadable(_)) => "FolderUnreadable",
            Self::Sync(_) => "SyncError",
            Self::AlreadyInitialized(_) => "AlreadyInitialized",
            Self::UnknownRequest(_) => "UnknownRequest",
            Self::Io(_) => "Io",
        }
    }
}

pub struct EngineConfig {
    pub registry_root: PathBuf,
    pub user_id: String,
    pub kdf_iterations: u32,
    pub seal_mode: SealMode,
    /// Used by [`Engine::init`] instead of generating a fresh 2048-bit pair.
    pub kdkp: Option<Kdkp>,
    /// Seeds the engine's random generator; `None` draws from the OS.
    pub seed: Option<u64>,
}

impl EngineConfig {
    pub fn new(registry_root: impl Into<PathBuf>, user_id: impl Into<String>) -> Self {
        Self {
            registry_root: registry_root.into(),
            user_id: user_id.into(),
            kdf_iterations: DEFAULT_KDF_ITERATIONS,
            seal_mode: SealMode::Cbc,
            kdkp: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PairSummary {
    pub id: String,
    pub prot_path: PathBuf,
    pub shared_path: PathBuf,
    pub state: PairState,
    pub files: usize,
    pub hidden: usize,
    pub quarantined: usize,
    pub policy: String,
    pub pending_request: Option<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct InboundRequest {
    pub id: String,
    pub pair_id: String,
    pub subject: String,
    pub fingerprint: String,
    pub first_seen: i64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct OutboundRequest {
    pub id: String,
    pub pair_id: String,
    pub shared_path: PathBuf,
    pub placed_at: i64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct HiddenEntry {
    pub path: String,
    pub kind: NodeKind,
    pub versions: Vec<BackupVersion>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PolicyView {
    pub policy: String,
    pub overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct BackupDecision {
    pub id: String,
    pub pair_id: String,
    pub path: String,
    pub captured_at: i64,
    pub length: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleReport {
    pub sync: SyncReport,
    pub key_installed: bool,
    pub request_placed: Option<RequestId>,
    pub inbound_new: usize,
    pub orphans_removed: usize,
}

impl CycleReport {
    pub fn is_empty(&self) -> bool {
        self.sync.is_empty()
            && !self.key_installed
            && self.request_placed.is_none()
            && self.inbound_new == 0
            && self.orphans_removed == 0
    }
}

struct Inbound {
    pair_id: PairId,
    verified: VerifiedRequest,
    first_seen: i64,
}

pub struct Engine {
    store: RegistryStore,
    backups: BackupStore,
    key: RegistryKey,
    mode: SealMode,
    reg: Registry,
    identity: Arc<dyn IdentityToken>,
    validator: Arc<dyn ChainValidator>,
    signer: RequestSigner,
    inbound: BTreeMap<RequestId, Inbound>,
    /// Requests already answered or refused during this run.
    decided: HashSet<RequestId>,
    /// Inbound requests that failed verification.
    bad_requests: HashSet<RequestId>,
    /// Responses that failed verification; not retried.
    bad_responses: HashSet<(RequestId, ResponseId)>,
    suspended: HashSet<PairId>,
    events: EventLog,
    clock: Arc<dyn Clock>,
    rng: StdRng,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("user", &self.reg.user_id)
            .field("root", &self.store.root())
            .finish_non_exhaustive()
    }
}

fn io(e: std::io::Error) -> EngineError {
    EngineError::Io(e.to_string())
}

impl Engine {
    /// Creates a new registry under `config.registry_root`.
    pub fn init(
        mut config: EngineConfig,
        password: &str,
        identity: Arc<dyn IdentityToken>,
        validator: Arc<dyn ChainValidator>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, EngineError> {
        let store = RegistryStore::new(&config.registry_root);
        if store.exists() {
            return Err(EngineError::AlreadyInitialized(store.registry_path()));
        }
        let mut rng = seeded(config.seed);
        let (reg, key) = store.create(
            &config.user_id,
            password,
            config.kdf_iterations,
            config.seal_mode,
            config.kdkp.take(),
            &mut rng,
        )?;
        Self::assemble(store, reg, key, config.seal_mode, identity, validator, clock, rng)
    }

    /// Unseals an existing registry.
    pub fn open(
        config: EngineConfig,
        password: &str,
        identity: Arc<dyn IdentityToken>,
        validator: Arc<dyn ChainValidator>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, EngineError> {
        let store = RegistryStore::new(&config.registry_root);
        let (reg, key, mode) = store.load(password)?;
        let rng = seeded(config.seed);
        Self::assemble(store, reg, key, mode, identity, validator, clock, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        store: RegistryStore,
        reg: Registry,
        key: RegistryKey,
        mode: SealMode,
        identity: Arc<dyn IdentityToken>,
        validator: Arc<dyn ChainValidator>,
        clock: Arc<dyn Clock>,
        rng: StdRng,
    ) -> Result<Self, EngineError> {
        let events = EventLog::open(store.root().join(EVENTS_FILE)).map_err(io)?;
        Ok(Self {
            backups: store.backups(),
            store,
            key,
            mode,
            reg,
            identity,
            validator,
            signer: RequestSigner::new(),
            inbound: BTreeMap::new(),
            decided: HashSet::new(),
            bad_requests: HashSet::new(),
            bad_responses: HashSet::new(),
            suspended: HashSet::new(),
            events,
            clock,
            rng,
        })
    }

    pub fn user_id(&self) -> &str {
        &self.reg.user_id
    }

    pub fn registry(&self) -> &Registry {
        &self.reg
    }

    pub fn registry_root(&self) -> &Path {
        self.store.root()
    }

    pub fn backups(&self) -> &BackupStore {
        &self.backups
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    /// Applies `f` to the registry settings and saves them when they changed.
    pub fn update_settings(&mut self, f: impl FnOnce(&mut Settings)) -> Result<(), EngineError> {
        let mut settings = self.reg.settings.clone();
        f(&mut settings);
        if settings != self.reg.settings {
            self.reg.settings = settings;
            self.save()?;
        }
        Ok(())
    }

    pub fn save(&mut self) -> Result<(), EngineError> {
        self.store.save(&self.reg, &self.key, self.mode, &mut self.rng)?;
        Ok(())
    }

    fn emit(&mut self, kind: EventKind) {
        let now = self.clock.now();
        self.events.push(now, kind);
    }

    /// Pairs a prot folder with a shared folder. When the shared folder
    /// already holds protected files, a key request is placed right away.
    pub fn add_pair(&mut self, prot: &Path, shared: &Path, spec: AlgorithmSpec) -> Result<PairId, EngineError> {
        let id = self.reg.add_pair(prot, shared, spec, &mut self.rng)?;
        if self.reg.pair(id)?.state() == PairState::AwaitingKey {
            // A failed placement is retried by the next cycle.
            if let Err(e) = self.request_key(id) {
                log::warn!("cannot place key request for pair {}: {e}", pair_ref(id));
            }
        }
        self.save()?;
        Ok(id)
    }

    pub fn remove_pair(&mut self, id: PairId) -> Result<(), EngineError> {
        let pair = self.reg.pair(id)?;
        let shared = pair.shared_path.clone();
        let mine: Vec<RequestId> = self
            .reg
            .pending_requests
            .values()
            .filter(|r| r.pair_id == id)
            .map(|r| r.id)
            .collect();
        for r in mine {
            remove_request_files(&shared, &r);
        }
        self.reg.remove_pair(id)?;
        self.inbound.retain(|_, i| i.pair_id != id);
        self.suspended.remove(&id);
        self.save()
    }

    pub fn pairs(&self) -> Vec<PairSummary> {
        self.reg
            .pairs
            .values()
            .map(|p| PairSummary {
                id: pair_ref(p.id),
                prot_path: p.prot_path.clone(),
                shared_path: p.shared_path.clone(),
                state: p.state(),
                files: p.entries.values().filter(|e| !e.hidden && e.kind == NodeKind::File).count(),
                hidden: p.hidden_entries().count(),
                quarantined: p.quarantine.len(),
                policy: p.policy.unwrap_or(self.reg.settings.default_policy).to_string(),
                pending_request: self
                    .reg
                    .pending_requests
                    .values()
                    .find(|r| r.pair_id == p.id)
                    .map(|r| r.id.to_string()),
            })
            .collect()
    }

    pub fn pair_ids(&self) -> Vec<PairId> {
        self.reg.pairs.keys().copied().collect()
    }

    /// Places (or replaces) this user's key request for an awaiting pair.
    fn request_key(&mut self, pair_id: PairId) -> Result<(), EngineError> {
        let shared = self.reg.pair(pair_id)?.shared_path.clone();
        let old: Vec<RequestId> = self
            .reg
            .pending_requests
            .values()
            .filter(|r| r.pair_id == pair_id)
            .map(|r| r.id)
            .collect();
        let bytes = self.signer.request_bytes(self.identity.as_ref(), &self.reg.kdkp.public_der())?;
        let id = place_request(&shared, &bytes, &mut self.rng)?;
        for r in old {
            remove_request_files(&shared, &r);
            self.reg.pending_requests.remove(&r);
        }
        self.reg.pending_requests.insert(
            id,
            PendingRequest {
                id,
                pair_id,
                shared_path: shared,
                placed_at: self.clock.now(),
                request_bytes: bytes,
            },
        );
        Ok(())
    }

    /// One cycle of one pair: key distribution first, then synchronization.
    pub fn run_cycle(&mut self, pair_id: PairId) -> Result<CycleReport, EngineError> {
        let before = self.reg.clone();
        let result = self.cycle_inner(pair_id);
        let suspended_reason = match &result {
            Err(EngineError::Keydist(KeydistError::FolderReadOnly)) => Some("shared folder is read-only".to_owned()),
            Err(EngineError::Sync(SyncError::FolderUnreadable(m))) => Some(format!("folder unreadable: {m}")),
            Ok(r) if r.sync.read_only() => Some("shared folder is read-only".to_owned()),
            _ => None,
        };
        match suspended_reason {
            Some(reason) => {
                if self.suspended.insert(pair_id) {
                    log::warn!("pair {} suspended: {reason}", pair_ref(pair_id));
                    self.emit(EventKind::PairSuspended {
                        pair_id: pair_ref(pair_id),
                        reason,
                    });
                }
            }
            None if result.is_ok() => {
                self.suspended.remove(&pair_id);
            }
            None => {}
        }
        if self.reg != before {
            self.save()?;
        }
        result
    }

    fn cycle_inner(&mut self, pair_id: PairId) -> Result<CycleReport, EngineError> {
        let mut report = CycleReport::default();
        if self.reg.pair(pair_id)?.state() == PairState::AwaitingKey {
            self.await_key(pair_id, &mut report)?;
            if self.reg.pair(pair_id)?.state() == PairState::AwaitingKey {
                return Ok(report);
            }
        } else {
            self.serve_requests(pair_id, &mut report)?;
        }
        let now = self.clock.now();
        let mut ctx = SyncContext {
            store: &self.backups,
            rng: &mut self.rng,
            now,
        };
        report.sync = run_pair_cycle(&mut self.reg, pair_id, &mut ctx)?;
        for ev in report.sync.events.clone() {
            self.emit(ev);
        }
        Ok(report)
    }

    fn await_key(&mut self, pair_id: PairId, report: &mut CycleReport) -> Result<(), EngineError> {
        let now = self.clock.now();
        let shared = self.reg.pair(pair_id)?.shared_path.clone();
        let pending = self.reg.pending_requests.clone();
        let scan = scan_folder(&shared, &|id| pending.get(id).is_some_and(|r| r.pair_id == pair_id))?;
        for (req, resp) in &scan.responses_to_mine {
            if self.bad_responses.contains(&(*req, *resp)) {
                continue;
            }
            let request = &pending[req];
            let Ok(bytes) = fs::read(shared.join(req.response_file_name(resp))) else {
                continue;
            };
            match process_response(
                &bytes,
                &req.request_file_name(),
                &request.request_bytes,
                &self.reg.kdkp,
                self.validator.as_ref(),
                now,
            ) {
                Ok(installed) => {
                    self.reg.pair_mut(pair_id)?.key = Some(installed.pair_key);
                    for r in pending.values().filter(|r| r.pair_id == pair_id) {
                        remove_request_files(&shared, &r.id);
                        self.reg.pending_requests.remove(&r.id);
                    }
                    log::info!("key installed for pair {} from {}", pair_ref(pair_id), installed.responder.subject);
                    self.emit(EventKind::KeyInstalled {
                        pair_id: pair_ref(pair_id),
                        responder: installed.responder.subject.clone(),
                        fingerprint: installed.responder.fingerprint.clone(),
                    });
                    report.key_installed = true;
                    break;
                }
                Err(e) => {
                    log::warn!("rejected response {} for pair {}: {e}", req.response_file_name(resp), pair_ref(pair_id));
                    self.bad_responses.insert((*req, *resp));
                }
            }
        }
        if !report.key_installed {
            let current = pending.values().find(|r| r.pair_id == pair_id);
            let stale = current.is_none_or(|r| {
                now - r.placed_at > self.reg.settings.response_wait_secs || !shared.join(r.id.request_file_name()).exists()
            });
            if stale {
                self.request_key(pair_id)?;
                report.request_placed = self
                    .reg
                    .pending_requests
                    .values()
                    .find(|r| r.pair_id == pair_id)
                    .map(|r| r.id);
            }
        }
        let timeout = self.reg.settings.orphan_timeout_secs;
        let pair = self.reg.pair_mut(pair_id)?;
        report.orphans_removed = cleanup_orphans(&shared, &scan.orphans, &mut pair.orphans_seen, now, timeout);
        Ok(())
    }

    fn serve_requests(&mut self, pair_id: PairId, report: &mut CycleReport) -> Result<(), EngineError> {
        let now = self.clock.now();
        let shared = self.reg.pair(pair_id)?.shared_path.clone();
        let pending = self.reg.pending_requests.clone();
        let scan = match scan_folder(&shared, &|id| pending.contains_key(id)) {
            Ok(s) => s,
            Err(KeydistError::Io(e)) => return Err(SyncError::FolderUnreadable(e).into()),
            Err(e) => return Err(e.into()),
        };
        let present: HashSet<RequestId> = scan.inbound.iter().map(|(id, _)| *id).collect();
        self.inbound.retain(|id, i| i.pair_id != pair_id || present.contains(id));
        for (id, bytes) in scan.inbound {
            if self.inbound.contains_key(&id) || self.decided.contains(&id) || self.bad_requests.contains(&id) {
                continue;
            }
            match verify_request(&id.request_file_name(), &bytes, self.validator.as_ref(), now) {
                Ok(verified) => {
                    let who = verified.requester().clone();
                    self.inbound.insert(
                        id,
                        Inbound {
                            pair_id,
                            verified,
                            first_seen: now,
                        },
                    );
                    report.inbound_new += 1;
                    self.emit(EventKind::KeyRequestInbound {
                        pair_id: pair_ref(pair_id),
                        request_id: id.to_string(),
                        subject: who.subject,
                        fingerprint: who.fingerprint,
                    });
                }
                Err(e) => {
                    log::warn!("ignoring request {}: {e}", id.request_file_name());
                    self.bad_requests.insert(id);
                }
            }
        }
        let timeout = self.reg.settings.orphan_timeout_secs;
        let pair = self.reg.pair_mut(pair_id)?;
        report.orphans_removed = cleanup_orphans(&shared, &scan.orphans, &mut pair.orphans_seen, now, timeout);
        Ok(())
    }

    /// Runs one cycle of every pair, in pair id order.
    pub fn run_all(&mut self) -> Vec<(PairId, Result<CycleReport, EngineError>)> {
        self.pair_ids().into_iter().map(|id| (id, self.run_cycle(id))).collect()
    }

    pub fn inbound_requests(&self) -> Vec<InboundRequest> {
        self.inbound
            .iter()
            .map(|(id, i)| InboundRequest {
                id: id.to_string(),
                pair_id: pair_ref(i.pair_id),
                subject: i.verified.requester().subject.clone(),
                fingerprint: i.verified.requester().fingerprint.clone(),
                first_seen: i.first_seen,
            })
            .collect()
    }

    pub fn outbound_requests(&self) -> Vec<OutboundRequest> {
        self.reg
            .pending_requests
            .values()
            .map(|r| OutboundRequest {
                id: r.id.to_string(),
                pair_id: pair_ref(r.pair_id),
                shared_path: r.shared_path.clone(),
                placed_at: r.placed_at,
            })
            .collect()
    }

    /// Answers an inbound request. Each request can be decided once; a
    /// failed approval leaves it in the inbox.
    pub fn decide_request(&mut self, request: &str, decision: Decision) -> Result<Option<ResponseId>, EngineError> {
        let id: RequestId = request
            .parse()
            .map_err(|_| EngineError::UnknownRequest(request.to_owned()))?;
        let inbound = self
            .inbound
            .remove(&id)
            .ok_or_else(|| EngineError::UnknownRequest(request.to_owned()))?;
        if decision == Decision::Deny {
            self.decided.insert(id);
            log::info!("denied key request {id} from {}", inbound.verified.requester().subject);
            return Ok(None);
        }
        let answered = (|| {
            let pair = self.reg.pair(inbound.pair_id)?;
            let key = pair.key.clone().ok_or(SyncError::AwaitingKey)?;
            let shared = pair.shared_path.clone();
            let (rid, bytes) = build_response(&inbound.verified, decision, &key, self.identity.as_ref(), &mut self.rng)?;
            place_response(&shared, &id, &rid, &bytes)?;
            Ok::<_, EngineError>(rid)
        })();
        match answered {
            Ok(rid) => {
                self.decided.insert(id);
                Ok(Some(rid))
            }
            Err(e) => {
                self.inbound.insert(id, inbound);
                Err(e)
            }
        }
    }

    pub fn hidden(&self, pair_id: PairId) -> Result<Vec<HiddenEntry>, EngineError> {
        Ok(self
            .reg
            .pair(pair_id)?
            .hidden_entries()
            .map(|e| HiddenEntry {
                path: e.cleartext_path.clone(),
                kind: e.kind,
                versions: e.backups.clone(),
            })
            .collect())
    }

    /// Schedules a backup version (newest by default) for restoration and
    /// runs a cycle so the file reappears right away.
    pub fn restore(&mut self, pair_id: PairId, path: &str, version: Option<u64>) -> Result<CycleReport, EngineError> {
        self.reg.restore_entry(pair_id, path, version, &self.backups)?;
        self.save()?;
        self.run_cycle(pair_id)
    }

    pub fn policy(&self, pair_id: PairId) -> Result<PolicyView, EngineError> {
        let pair = self.reg.pair(pair_id)?;
        Ok(PolicyView {
            policy: pair.policy.unwrap_or(self.reg.settings.default_policy).to_string(),
            overrides: pair
                .entries
                .values()
                .filter_map(|e| e.policy.map(|p| (e.cleartext_path.clone(), p.to_string())))
                .collect(),
        })
    }

    pub fn set_policy(&mut self, pair_id: PairId, path: Option<&str>, policy: BackupPolicy) -> Result<(), EngineError> {
        self.reg.set_policy(pair_id, path, policy)?;
        self.save()
    }

    pub fn backup_decisions(&self) -> Vec<BackupDecision> {
        self.reg
            .pairs
            .values()
            .flat_map(|p| {
                p.pending_backups.values().map(|b| BackupDecision {
                    id: format!("{:016x}", b.id),
                    pair_id: pair_ref(p.id),
                    path: b.cleartext_path.clone(),
                    captured_at: b.captured_at,
                    length: b.length,
                })
            })
            .collect()
    }

    /// Keeps or discards content held back under the `ask` policy.
    pub fn resolve_backup_decision(&mut self, decision: &str, keep: bool) -> Result<Option<u64>, EngineError> {
        let unknown = || EngineError::UnknownDecision(decision.to_owned());
        let id = u64::from_str_radix(decision, 16).map_err(|_| unknown())?;
        let pair_id = self
            .reg
            .pairs
            .values()
            .find(|p| p.pending_backups.contains_key(&id))
            .map(|p| p.id)
            .ok_or_else(unknown)?;
        let stored = self.reg.resolve_backup_decision(pair_id, id, keep, &self.backups)?;
        self.save()?;
        Ok(stored)
    }

    pub fn quarantined(&self, pair_id: PairId) -> Result<Vec<QuarantineRecord>, EngineError> {
        Ok(self.reg.pair(pair_id)?.quarantine.values().cloned().collect())
    }

    pub fn events_since(&self, seq: u64) -> Vec<Event> {
        self.events.since(seq)
    }

    pub fn last_event_seq(&self) -> u64 {
        self.events.last_seq()
    }

    pub fn acknowledge_events(&mut self, upto: u64) -> Result<(), EngineError> {
        self.events.acknowledge(upto).map_err(io)
    }
}

fn seeded(seed: Option<u64>) -> StdRng {
    match seed {
        Some(s) => StdRng::seed_from_u64(s),
        None => StdRng::from_entropy(),
    }
}

/// Convenience for callers holding a request id as text.
pub fn parse_decision(s: &str) -> Option<Decision> {
    match s {
        "approve" => Some(Decision::Approve),
        "deny" => Some(Decision::Deny),
        _ => None,
    }
}

