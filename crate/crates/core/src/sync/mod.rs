//! Periodic two-way synchronization of one pair.
//!
//! A cycle scans both folders against the registry ([`scan_pair`]), turns the
//! differences into an ordered list of actions ([`plan_actions`]) and applies
//! them ([`apply_actions`]). The prot folder outranks the shared folder: a
//! shared file is only ever decrypted into the prot folder after its MAC
//! verified, and anything failing name decryption or the MAC is quarantined.
//!
//! Concurrent edits are detected with the version lineage carried in each
//! blob (see [`crate::crypto`]): an incoming version that did not build on the
//! version this instance last published is a conflict, even when the cloud
//! provider silently replaced our upload.

mod apply;
mod plan;
mod scan;

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::VersionTag;
use crate::events::EventKind;
use crate::fsutil::{FileStamp, NodeKind};

pub use apply::{apply_actions, conflict_name, SyncContext};
pub use plan::plan_actions;
pub use scan::scan_pair;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("pair has no key yet")]
    AwaitingKey,
    #[error("folder unreadable: {0}")]
    FolderUnreadable(String),
    #[error("shared folder is read-only")]
    FolderReadOnly,
    #[error("{0} differs only in letter case from an existing name")]
    CaseCollision(String),
    #[error("{0}")]
    Other(String),
}

/// A shared-folder file as seen by the scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedFile {
    /// Encrypted path relative to the shared folder.
    pub rel: String,
    pub stamp: FileStamp,
}

/// Verified content of a shared file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedBlob {
    pub plaintext: Vec<u8>,
    pub tag: VersionTag,
    pub parent: Option<VersionTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delta {
    /// Cleartext path relative to the prot folder.
    pub path: String,
    pub kind: NodeKind,
    pub prot: Option<FileStamp>,
    pub shared: Option<SharedFile>,
    pub incoming: Option<Arc<VerifiedBlob>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Foreign {
    pub shared_rel: String,
    pub stamp: FileStamp,
    pub reason: String,
}

/// Differences between the folders and the registry, by category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChangeSet {
    pub prot_only: Vec<Delta>,
    pub shared_only: Vec<Delta>,
    pub both: Vec<Delta>,
    pub deletions_prot: Vec<Delta>,
    pub deletions_shared: Vec<Delta>,
    pub foreign: Vec<Foreign>,
    /// Entries with a restore request: (path, backup version).
    pub restores: Vec<(String, u64)>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.prot_only.is_empty()
            && self.shared_only.is_empty()
            && self.both.is_empty()
            && self.deletions_prot.is_empty()
            && self.deletions_shared.is_empty()
            && self.foreign.is_empty()
            && self.restores.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Prot,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ActionKind {
    Quarantine,
    Restore,
    ConflictSplit,
    CreateDir,
    EncryptCopy,
    BackupProt,
    DecryptCopy,
    DeleteShared,
    DeleteProtWithBackup,
    Forget,
    RemoveDir,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncAction {
    Quarantine(Foreign),
    Restore { path: String, version: u64 },
    /// Both sides changed; keep both contents.
    ConflictSplit(Delta),
    CreateDir { side: Side, delta: Delta },
    EncryptCopy(Delta),
    /// Captures the current prot cleartext before a [`SyncAction::DecryptCopy`]
    /// overwrites it.
    BackupProt(Delta),
    DecryptCopy(Delta),
    DeleteShared(Delta),
    DeleteProtWithBackup(Delta),
    /// Both copies are gone; only the registry entry is hidden.
    Forget(Delta),
    RemoveDir { side: Side, delta: Delta },
}

impl SyncAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            Self::Quarantine(_) => ActionKind::Quarantine,
            Self::Restore { .. } => ActionKind::Restore,
            Self::ConflictSplit(_) => ActionKind::ConflictSplit,
            Self::CreateDir { .. } => ActionKind::CreateDir,
            Self::EncryptCopy(_) => ActionKind::EncryptCopy,
            Self::BackupProt(_) => ActionKind::BackupProt,
            Self::DecryptCopy(_) => ActionKind::DecryptCopy,
            Self::DeleteShared(_) => ActionKind::DeleteShared,
            Self::DeleteProtWithBackup(_) => ActionKind::DeleteProtWithBackup,
            Self::Forget(_) => ActionKind::Forget,
            Self::RemoveDir { .. } => ActionKind::RemoveDir,
        }
    }

    pub fn path(&self) -> &str {
        match self {
            Self::Quarantine(f) => &f.shared_rel,
            Self::Restore { path, .. } => path,
            Self::ConflictSplit(d)
            | Self::EncryptCopy(d)
            | Self::BackupProt(d)
            | Self::DecryptCopy(d)
            | Self::DeleteShared(d)
            | Self::DeleteProtWithBackup(d)
            | Self::Forget(d)
            | Self::CreateDir { delta: d, .. }
            | Self::RemoveDir { delta: d, .. } => &d.path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionError {
    pub path: String,
    pub error: SyncErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SyncErrorKind {
    FolderReadOnly,
    CaseCollision,
    Io,
    Name,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncReport {
    pub copied: usize,
    pub deleted: usize,
    pub conflicts: usize,
    pub quarantined: usize,
    pub restored: usize,
    pub backed_up: usize,
    pub errors: Vec<ActionError>,
    pub events: Vec<EventKind>,
}

impl SyncReport {
    pub fn is_empty(&self) -> bool {
        self.copied == 0
            && self.deleted == 0
            && self.conflicts == 0
            && self.quarantined == 0
            && self.restored == 0
            && self.backed_up == 0
            && self.errors.is_empty()
            && self.events.is_empty()
    }

    pub fn merge(&mut self, other: SyncReport) {
        self.copied += other.copied;
        self.deleted += other.deleted;
        self.conflicts += other.conflicts;
        self.quarantined += other.quarantined;
        self.restored += other.restored;
        self.backed_up += other.backed_up;
        self.errors.extend(other.errors);
        self.events.extend(other.events);
    }

    pub fn read_only(&self) -> bool {
        self.errors.iter().any(|e| e.error == SyncErrorKind::FolderReadOnly)
    }
}

/// Scan, plan and apply once; a second pass picks up conflict copies so both
/// versions reach the shared folder within the same cycle.
pub fn run_pair_cycle<R: rand::RngCore + rand::CryptoRng>(
    reg: &mut crate::registry::Registry,
    pair_id: crate::registry::PairId,
    ctx: &mut SyncContext<'_, R>,
) -> Result<SyncReport, SyncError> {
    let mut report = SyncReport::default();
    for _ in 0..2 {
        let changes = scan_pair(reg.pair(pair_id).map_err(|e| SyncError::Other(e.to_string()))?)?;
        let pass = apply_actions(reg, pair_id, plan_actions(changes), ctx);
        let again = pass.conflicts > 0;
        report.merge(pass);
        if !again {
            break;
        }
    }
    Ok(report)
}


#[cfg(test)]
mod tests;
