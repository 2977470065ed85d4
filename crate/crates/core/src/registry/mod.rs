//! The per-user registry: pairs, their keys, per-file state, hidden entries
//! and backup versions. It lives in the user's home directory, sealed under a
//! password-derived key, and is never placed in or synchronized through a
//! shared folder.

mod encoding;
mod store;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{generate_pair_key, AlgorithmSpec, CryptoError, PairKey, VersionTag};
use crate::fsutil::{FileStamp, NodeKind};
use crate::keydist::{Kdkp, RequestId, DEFAULT_ORPHAN_TIMEOUT_SECS, DEFAULT_RESPONSE_WAIT_SECS};

pub use encoding::{decode_registry, encode_registry, REGISTRY_FORMAT_VERSION};
pub use store::{BackupStore, RegistryStore};

pub type PairId = u64;
pub type EntryId = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("wrong password")]
    WrongPassword,
    #[error("registry is corrupt: {0}")]
    CorruptRegistry(String),
    #[error("unsupported registry version")]
    UnsupportedVersion,
    #[error(transparent)]
    Crypto(CryptoError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("prot and shared folders must not be nested inside each other")]
    NestedPaths,
    #[error("shared folder is already part of a pair")]
    SharedFolderAlreadyPaired,
    #[error("unknown pair {0}")]
    UnknownPair(PairId),
    #[error("unknown entry {0}")]
    UnknownEntry(String),
    #[error("entry is already hidden")]
    AlreadyHidden,
    #[error("no such backup version")]
    NoSuchVersion,
    #[error("nothing to restore")]
    NothingToRestore,
    #[error("invalid backup policy: {0}")]
    InvalidPolicy(String),
    #[error("unknown backup decision {0}")]
    UnknownDecision(u64),
}

impl From<CryptoError> for RegistryError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::WrongPassword => RegistryError::WrongPassword,
            CryptoError::UnsupportedVersion => RegistryError::UnsupportedVersion,
            other => RegistryError::Crypto(other),
        }
    }
}

impl From<std::io::Error> for RegistryError {
    fn from(e: std::io::Error) -> Self {
        RegistryError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackupPolicy {
    Never,
    KeepAtMost(u32),
    AskUser,
}

impl BackupPolicy {
    /// Parses `never`, `keep:N` (N ≥ 1) or `ask`.
    pub fn parse(s: &str) -> Result<Self, RegistryError> {
        match s.trim() {
            "never" => Ok(Self::Never),
            "ask" => Ok(Self::AskUser),
            other => {
                let n = other
                    .strip_prefix("keep:")
                    .and_then(|n| n.parse::<u32>().ok())
                    .ok_or_else(|| RegistryError::InvalidPolicy(other.to_owned()))?;
                Self::keep(n)
            }
        }
    }

    pub fn keep(n: u32) -> Result<Self, RegistryError> {
        if n == 0 {
            return Err(RegistryError::InvalidPolicy("keep:0".into()));
        }
        Ok(Self::KeepAtMost(n))
    }
}

impl std::fmt::Display for BackupPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Never => f.write_str("never"),
            Self::KeepAtMost(n) => write!(f, "keep:{n}"),
            Self::AskUser => f.write_str("ask"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub scan_period_secs: u64,
    pub default_policy: BackupPolicy,
    pub orphan_timeout_secs: i64,
    pub response_wait_secs: i64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            scan_period_secs: 5,
            default_policy: BackupPolicy::KeepAtMost(10),
            orphan_timeout_secs: DEFAULT_ORPHAN_TIMEOUT_SECS,
            response_wait_secs: DEFAULT_RESPONSE_WAIT_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupVersion {
    pub version_id: u64,
    pub captured_at: i64,
    /// Path of the content file relative to the backup store root.
    pub content_ref: String,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub id: EntryId,
    /// `/`-separated path inside the prot folder.
    pub cleartext_path: String,
    /// The same path with every segment encrypted, inside the shared folder.
    pub encrypted_path: String,
    pub kind: NodeKind,
    /// Prot-side file as last synchronized; `None` when not materialized.
    pub prot_stamp: Option<FileStamp>,
    /// Shared-side file as last synchronized.
    pub shared_stamp: Option<FileStamp>,
    pub hidden: bool,
    pub backups: Vec<BackupVersion>,
    pub next_version: u64,
    pub policy: Option<BackupPolicy>,
    /// Version tag of the shared blob the prot file corresponds to.
    pub shared_tag: Option<VersionTag>,
    /// Tag of a blob this instance published that no incoming update has
    /// built on yet.
    pub local_head: Option<VersionTag>,
    /// Backup version the next cycle should write back into the prot folder.
    pub restore_pending: Option<u64>,
}

impl RegistryEntry {
    pub fn new(id: EntryId, cleartext_path: String, encrypted_path: String, kind: NodeKind) -> Self {
        Self {
            id,
            cleartext_path,
            encrypted_path,
            kind,
            prot_stamp: None,
            shared_stamp: None,
            hidden: false,
            backups: Vec::new(),
            next_version: 1,
            policy: None,
            shared_tag: None,
            local_head: None,
            restore_pending: None,
        }
    }

    pub fn name(&self) -> &str {
        self.cleartext_path.rsplit('/').next().unwrap_or(&self.cleartext_path)
    }
}

/// A shared-folder file refused by the integrity checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    /// Path relative to the shared folder.
    pub shared_path: String,
    pub stamp: FileStamp,
    pub since: i64,
    pub reason: String,
}

/// Cleartext held back under the `ask` policy until the user decides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingBackup {
    pub id: u64,
    pub entry_id: EntryId,
    pub cleartext_path: String,
    pub captured_at: i64,
    pub length: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairState {
    AwaitingKey,
    Active,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub id: PairId,
    pub prot_path: PathBuf,
    pub shared_path: PathBuf,
    pub key: Option<PairKey>,
    pub policy: Option<BackupPolicy>,
    pub entries: BTreeMap<String, RegistryEntry>,
    pub orphans_seen: BTreeMap<String, i64>,
    pub quarantine: BTreeMap<String, QuarantineRecord>,
    pub pending_backups: BTreeMap<u64, PendingBackup>,
}

impl Pair {
    pub fn state(&self) -> PairState {
        if self.key.is_some() {
            PairState::Active
        } else {
            PairState::AwaitingKey
        }
    }

    pub fn entry(&self, path: &str) -> Result<&RegistryEntry, RegistryError> {
        self.entries.get(path).ok_or_else(|| RegistryError::UnknownEntry(path.to_owned()))
    }

    pub fn entry_mut(&mut self, path: &str) -> Result<&mut RegistryEntry, RegistryError> {
        self.entries
            .get_mut(path)
            .ok_or_else(|| RegistryError::UnknownEntry(path.to_owned()))
    }

    pub fn hidden_entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values().filter(|e| e.hidden)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRequest {
    pub id: RequestId,
    pub pair_id: PairId,
    pub shared_path: PathBuf,
    pub placed_at: i64,
    /// Exact bytes of the placed request file; responses are bound to them.
    pub request_bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackupOutcome {
    Stored(u64),
    Skipped,
    NeedsUserDecision(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    pub user_id: String,
    pub kdkp: Kdkp,
    pub settings: Settings,
    pub pairs: BTreeMap<PairId, Pair>,
    pub pending_requests: BTreeMap<RequestId, PendingRequest>,
}

/// True for names that never take part in content synchronization.
pub fn is_protocol_name(name: &str) -> bool {
    name.starts_with('_') || name.starts_with('.')
}

fn shared_has_protected_files(shared: &Path) -> Result<bool, RegistryError> {
    for entry in fs::read_dir(shared)? {
        let entry = entry?;
        let name = entry.file_name();
        if !is_protocol_name(&name.to_string_lossy()) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn canonical_dir(path: &Path) -> Result<PathBuf, RegistryError> {
    match fs::canonicalize(path) {
        Ok(p) if p.is_dir() => Ok(p),
        _ => Err(RegistryError::NotADirectory(path.to_path_buf())),
    }
}

impl Registry {
    pub fn new(user_id: impl Into<String>, kdkp: Kdkp) -> Self {
        Self {
            user_id: user_id.into(),
            kdkp,
            settings: Settings::default(),
            pairs: BTreeMap::new(),
            pending_requests: BTreeMap::new(),
        }
    }

    pub fn pair(&self, id: PairId) -> Result<&Pair, RegistryError> {
        self.pairs.get(&id).ok_or(RegistryError::UnknownPair(id))
    }

    pub fn pair_mut(&mut self, id: PairId) -> Result<&mut Pair, RegistryError> {
        self.pairs.get_mut(&id).ok_or(RegistryError::UnknownPair(id))
    }

    /// Registers a new pair. An empty shared folder gets a fresh key; a
    /// populated one leaves the pair waiting for a key from another member.
    pub fn add_pair<R: RngCore + CryptoRng>(
        &mut self,
        prot_path: &Path,
        shared_path: &Path,
        spec: AlgorithmSpec,
        rng: &mut R,
    ) -> Result<PairId, RegistryError> {
        let prot = canonical_dir(prot_path)?;
        let shared = canonical_dir(shared_path)?;
        if prot.starts_with(&shared) || shared.starts_with(&prot) {
            return Err(RegistryError::NestedPaths);
        }
        if self
            .pairs
            .values()
            .any(|p| p.shared_path.starts_with(&shared) || shared.starts_with(&p.shared_path))
        {
            return Err(RegistryError::SharedFolderAlreadyPaired);
        }
        let key = if shared_has_protected_files(&shared)? {
            None
        } else {
            Some(generate_pair_key(spec, rng))
        };
        let mut id: PairId = rng.gen();
        while id == 0 || self.pairs.contains_key(&id) {
            id = rng.gen();
        }
        self.pairs.insert(
            id,
            Pair {
                id,
                prot_path: prot,
                shared_path: shared,
                key,
                policy: None,
                entries: BTreeMap::new(),
                orphans_seen: BTreeMap::new(),
                quarantine: BTreeMap::new(),
                pending_backups: BTreeMap::new(),
            },
        );
        Ok(id)
    }

    /// Forgets a pair. Folder contents and backups are left alone.
    pub fn remove_pair(&mut self, id: PairId) -> Result<Pair, RegistryError> {
        let pair = self.pairs.remove(&id).ok_or(RegistryError::UnknownPair(id))?;
        self.pending_requests.retain(|_, r| r.pair_id != id);
        Ok(pair)
    }

    pub fn effective_policy(&self, pair_id: PairId, path: &str) -> BackupPolicy {
        let Some(pair) = self.pairs.get(&pair_id) else {
            return self.settings.default_policy;
        };
        pair.entries
            .get(path)
            .and_then(|e| e.policy)
            .or(pair.policy)
            .unwrap_or(self.settings.default_policy)
    }

    /// Sets the pair default, or the override of one entry when `path` is given.
    pub fn set_policy(&mut self, pair_id: PairId, path: Option<&str>, policy: BackupPolicy) -> Result<(), RegistryError> {
        if let BackupPolicy::KeepAtMost(0) = policy {
            return Err(RegistryError::InvalidPolicy("keep:0".into()));
        }
        let pair = self.pair_mut(pair_id)?;
        match path {
            None => pair.policy = Some(policy),
            Some(p) => pair.entry_mut(p)?.policy = Some(policy),
        }
        Ok(())
    }

    /// Records `content` as a backup of `path` according to the effective policy.
    pub fn apply_backup_policy<R: RngCore>(
        &mut self,
        pair_id: PairId,
        path: &str,
        content: &[u8],
        store: &BackupStore,
        now: i64,
        rng: &mut R,
    ) -> Result<BackupOutcome, RegistryError> {
        let policy = self.effective_policy(pair_id, path);
        let pair = self.pair_mut(pair_id)?;
        let entry = pair.entries.get_mut(path).ok_or_else(|| RegistryError::UnknownEntry(path.to_owned()))?;
        match policy {
            BackupPolicy::Never => Ok(BackupOutcome::Skipped),
            BackupPolicy::KeepAtMost(n) => {
                let v = store_version(pair_id, entry, content, store, now)?;
                while entry.backups.len() > n as usize {
                    let old = entry.backups.remove(0);
                    store.remove(&old.content_ref);
                }
                Ok(BackupOutcome::Stored(v))
            }
            BackupPolicy::AskUser => {
                let mut id: u64 = rng.gen();
                while id == 0 || pair.pending_backups.contains_key(&id) {
                    id = rng.gen();
                }
                store.write_pending(id, content)?;
                pair.pending_backups.insert(
                    id,
                    PendingBackup {
                        id,
                        entry_id: entry.id,
                        cleartext_path: path.to_owned(),
                        captured_at: now,
                        length: content.len() as u64,
                    },
                );
                Ok(BackupOutcome::NeedsUserDecision(id))
            }
        }
    }

    /// Applies the user's answer to an `ask` prompt. Returns the stored version, if any.
    pub fn resolve_backup_decision(
        &mut self,
        pair_id: PairId,
        decision_id: u64,
        keep: bool,
        store: &BackupStore,
    ) -> Result<Option<u64>, RegistryError> {
        let pair = self.pair_mut(pair_id)?;
        let pending = pair
            .pending_backups
            .remove(&decision_id)
            .ok_or(RegistryError::UnknownDecision(decision_id))?;
        let content = store.read_pending(decision_id)?;
        store.remove_pending(decision_id);
        if !keep {
            return Ok(None);
        }
        let Some(entry) = pair.entries.values_mut().find(|e| e.id == pending.entry_id) else {
            return Ok(None);
        };
        Ok(Some(store_version(pair_id, entry, &content, store, pending.captured_at)?))
    }

    /// Marks an entry hidden, optionally keeping its last cleartext.
    pub fn hide_entry<R: RngCore>(
        &mut self,
        pair_id: PairId,
        path: &str,
        cleartext_backup: Option<&[u8]>,
        store: &BackupStore,
        now: i64,
        rng: &mut R,
    ) -> Result<BackupOutcome, RegistryError> {
        let entry = self.pair_mut(pair_id)?.entry_mut(path)?;
        if entry.hidden {
            return Err(RegistryError::AlreadyHidden);
        }
        entry.hidden = true;
        entry.prot_stamp = None;
        entry.shared_stamp = None;
        entry.shared_tag = None;
        entry.local_head = None;
        match cleartext_backup {
            Some(content) => self.apply_backup_policy(pair_id, path, content, store, now, rng),
            None => Ok(BackupOutcome::Skipped),
        }
    }

    /// Returns the bytes of a backup version (newest by default), unhides the
    /// entry and schedules the file to be written back on the next cycle.
    pub fn restore_entry(
        &mut self,
        pair_id: PairId,
        path: &str,
        version: Option<u64>,
        store: &BackupStore,
    ) -> Result<Vec<u8>, RegistryError> {
        let entry = self.pair_mut(pair_id)?.entry_mut(path)?;
        let chosen = match version {
            Some(v) => entry
                .backups
                .iter()
                .find(|b| b.version_id == v)
                .ok_or(RegistryError::NoSuchVersion)?,
            None => entry.backups.last().ok_or(RegistryError::NothingToRestore)?,
        };
        let content = store.read(&chosen.content_ref)?;
        entry.restore_pending = Some(chosen.version_id);
        entry.hidden = false;
        Ok(content)
    }
}

fn store_version(
    pair_id: PairId,
    entry: &mut RegistryEntry,
    content: &[u8],
    store: &BackupStore,
    now: i64,
) -> Result<u64, RegistryError> {
    let version_id = entry.next_version;
    let content_ref = store.write(pair_id, entry.id, version_id, content)?;
    entry.next_version += 1;
    entry.backups.push(BackupVersion {
        version_id,
        captured_at: now,
        content_ref,
        length: content.len() as u64,
    });
    Ok(version_id)
}
