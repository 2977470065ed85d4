use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{CryptoRng, Rng, RngCore};

use crate::codec::{encrypt_path, CodecError};
use crate::crypto::{protect_content_with_parent, PairKey};
use crate::events::{pair_ref, EventKind};
use crate::fsutil::{is_read_only_dir, is_read_only_error, join_rel, write_atomic, FileStamp, NodeKind};
use crate::registry::{BackupOutcome, BackupStore, PairId, QuarantineRecord, Registry, RegistryEntry, RegistryError};

use super::{ActionError, Delta, Foreign, Side, SyncAction, SyncErrorKind, SyncReport};

const DIR_MARK: FileStamp = FileStamp { mtime: 0, len: 0 };

/// What a cycle needs besides the registry: where backups go, randomness
/// for IVs and ids, and the current time.
pub struct SyncContext<'a, R> {
    pub store: &'a BackupStore,
    pub rng: &'a mut R,
    pub now: i64,
}

/// Name for the local copy of a conflicting file:
/// `dir/budget.xlsx` becomes `dir/budget (conflict of alice).xlsx`, with
/// ` (2)`, ` (3)`, ... appended while `taken` reports the name as used.
pub fn conflict_name(path: &str, user: &str, taken: impl Fn(&str) -> bool) -> String {
    let (dir, name) = match path.rfind('/') {
        Some(i) => (&path[..=i], &path[i + 1..]),
        None => ("", path),
    };
    let (stem, ext) = match name.rfind('.') {
        Some(i) if i > 0 => (&name[..i], &name[i..]),
        _ => (name, ""),
    };
    let base = format!("{dir}{stem} (conflict of {user})");
    let mut candidate = format!("{base}{ext}");
    let mut n = 2;
    while taken(&candidate) {
        candidate = format!("{base} ({n}){ext}");
        n += 1;
    }
    candidate
}

enum Fail {
    ReadOnly,
    Case(String),
    Io(io::Error),
    Name(CodecError),
    Registry(RegistryError),
}

impl From<io::Error> for Fail {
    fn from(e: io::Error) -> Self {
        if is_read_only_error(&e) {
            Fail::ReadOnly
        } else {
            Fail::Io(e)
        }
    }
}

impl From<CodecError> for Fail {
    fn from(e: CodecError) -> Self {
        Fail::Name(e)
    }
}

impl From<RegistryError> for Fail {
    fn from(e: RegistryError) -> Self {
        Fail::Registry(e)
    }
}

struct Applier<'r, 'c, 'a, R> {
    reg: &'r mut Registry,
    pair_id: PairId,
    ctx: &'c mut SyncContext<'a, R>,
    key: PairKey,
    prot_root: PathBuf,
    shared_root: PathBuf,
    shared_ro: bool,
    /// Paths whose backup failed; their prot file must not be replaced.
    blocked: HashSet<String>,
    report: SyncReport,
}

/// Applies `actions` in order. Failures are collected per action and never
/// stop the batch.
pub fn apply_actions<R: RngCore + CryptoRng>(
    reg: &mut Registry,
    pair_id: PairId,
    actions: Vec<SyncAction>,
    ctx: &mut SyncContext<'_, R>,
) -> SyncReport {
    let Some(pair) = reg.pairs.get(&pair_id) else {
        return SyncReport::default();
    };
    let Some(key) = pair.key.clone() else {
        return SyncReport::default();
    };
    let prot_root = pair.prot_path.clone();
    let shared_root = pair.shared_path.clone();
    let shared_ro = is_read_only_dir(&shared_root);
    let mut ap = Applier {
        reg,
        pair_id,
        ctx,
        key,
        prot_root,
        shared_root,
        shared_ro,
        blocked: HashSet::new(),
        report: SyncReport::default(),
    };
    for action in actions {
        let path = action.path().to_owned();
        if let Err(fail) = ap.apply(action) {
            ap.record(path, fail);
        }
    }
    ap.report
}

impl<R: RngCore + CryptoRng> Applier<'_, '_, '_, R> {
    fn record(&mut self, path: String, fail: Fail) {
        let (error, message) = match fail {
            Fail::ReadOnly => (SyncErrorKind::FolderReadOnly, "shared folder is read-only".to_owned()),
            Fail::Case(other) => (
                SyncErrorKind::CaseCollision,
                format!("name differs only in letter case from {other}"),
            ),
            Fail::Io(e) => (SyncErrorKind::Io, e.to_string()),
            Fail::Name(e) => (SyncErrorKind::Name, e.to_string()),
            Fail::Registry(e) => (SyncErrorKind::Io, e.to_string()),
        };
        log::warn!("sync {path}: {message}");
        self.report.errors.push(ActionError { path, error, message });
    }

    fn pref(&self) -> String {
        pair_ref(self.pair_id)
    }

    fn entries(&mut self) -> &mut std::collections::BTreeMap<String, RegistryEntry> {
        &mut self.reg.pairs.get_mut(&self.pair_id).expect("pair exists during apply").entries
    }

    fn ensure_entry(&mut self, path: &str, kind: NodeKind) -> Result<&mut RegistryEntry, Fail> {
        let encrypted = encrypt_path(&self.key, path)?;
        if !self.entries().contains_key(path) {
            let mut id: u64 = self.ctx.rng.gen();
            while id == 0 || self.entries().values().any(|e| e.id == id) {
                id = self.ctx.rng.gen();
            }
            let entry = RegistryEntry::new(id, path.to_owned(), encrypted.clone(), kind);
            self.entries().insert(path.to_owned(), entry);
        }
        let e = self.entries().get_mut(path).expect("just inserted");
        e.encrypted_path = encrypted;
        e.kind = kind;
        e.hidden = false;
        Ok(e)
    }

    fn prot(&self, path: &str) -> PathBuf {
        join_rel(&self.prot_root, path)
    }

    fn shared(&self, rel: &str) -> PathBuf {
        join_rel(&self.shared_root, rel)
    }

    fn check_writable(&self, target: &Path) -> Result<(), Fail> {
        if self.shared_ro {
            return Err(Fail::ReadOnly);
        }
        let mut dir = target.parent();
        while let Some(d) = dir {
            if d.exists() {
                return if is_read_only_dir(d) { Err(Fail::ReadOnly) } else { Ok(()) };
            }
            dir = d.parent();
        }
        Ok(())
    }

    /// Refuses a shared name that a case-insensitive filesystem would merge
    /// with a different existing name.
    fn check_case(&self, target: &Path) -> Result<(), Fail> {
        let (Some(dir), Some(name)) = (target.parent(), target.file_name().and_then(|n| n.to_str())) else {
            return Ok(());
        };
        let Ok(listing) = fs::read_dir(dir) else { return Ok(()) };
        for item in listing.flatten() {
            let other = item.file_name();
            let Some(other) = other.to_str() else { continue };
            if other != name && other.eq_ignore_ascii_case(name) {
                return Err(Fail::Case(other.to_owned()));
            }
        }
        Ok(())
    }

    fn apply(&mut self, action: SyncAction) -> Result<(), Fail> {
        match action {
            SyncAction::Quarantine(f) => self.quarantine(f),
            SyncAction::Restore { path, version } => self.restore(&path, version),
            SyncAction::ConflictSplit(d) => self.conflict_split(d),
            SyncAction::CreateDir { side, delta } => self.create_dir(side, delta),
            SyncAction::EncryptCopy(d) => self.encrypt_copy(d),
            SyncAction::BackupProt(d) => self.backup_prot(d),
            SyncAction::DecryptCopy(d) => self.decrypt_copy(d),
            SyncAction::DeleteShared(d) => self.delete_shared(d),
            SyncAction::DeleteProtWithBackup(d) => self.delete_prot(d),
            SyncAction::Forget(d) => self.forget(&d.path),
            SyncAction::RemoveDir { side, delta } => self.remove_dir(side, delta),
        }
    }

    fn quarantine(&mut self, f: Foreign) -> Result<(), Fail> {
        log::warn!("quarantined {}: {}", f.shared_rel, f.reason);
        let now = self.ctx.now;
        let pair = self.reg.pairs.get_mut(&self.pair_id).expect("pair exists during apply");
        let since = pair.quarantine.get(&f.shared_rel).map_or(now, |q| q.since);
        pair.quarantine.insert(
            f.shared_rel.clone(),
            QuarantineRecord {
                shared_path: f.shared_rel.clone(),
                stamp: f.stamp,
                since,
                reason: f.reason.clone(),
            },
        );
        self.report.quarantined += 1;
        let pair_id = self.pref();
        self.report.events.push(EventKind::Quarantine {
            pair_id,
            shared_path: f.shared_rel,
            reason: f.reason,
        });
        Ok(())
    }

    /// Encrypts `content` over the shared copy of `path`, chaining the new
    /// version to the one the prot file was last synchronized with.
    fn publish(&mut self, path: &str, content: &[u8], prot_stamp: FileStamp) -> Result<(), Fail> {
        let encrypted = encrypt_path(&self.key, path)?;
        let target = self.shared(&encrypted);
        self.check_writable(&target)?;
        self.check_case(&target)?;
        let parent_tag = self.entries().get(path).and_then(|e| e.shared_tag);
        let blob = protect_content_with_parent(&self.key, content, parent_tag, self.ctx.rng);
        if let Some(dir) = target.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(&target, &blob.to_bytes())?;
        let shared_stamp = FileStamp::of_path(&target)?;
        let tag = blob.tag();
        let e = self.ensure_entry(path, NodeKind::File)?;
        e.prot_stamp = Some(prot_stamp);
        e.shared_stamp = Some(shared_stamp);
        e.shared_tag = Some(tag);
        e.local_head = Some(tag);
        self.reg
            .pairs
            .get_mut(&self.pair_id)
            .expect("pair exists during apply")
            .quarantine
            .remove(&encrypted);
        self.report.copied += 1;
        Ok(())
    }

    /// Reads a prot file if it still carries the stamp seen by the scan.
    fn read_stable(&self, path: &str, expected: Option<FileStamp>) -> Result<Option<(Vec<u8>, FileStamp)>, Fail> {
        let file = self.prot(path);
        let before = match FileStamp::of_path(&file) {
            Ok(s) => s,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Fail::Io(e)),
        };
        if Some(before) != expected {
            return Ok(None);
        }
        let bytes = fs::read(&file).map_err(Fail::Io)?;
        if FileStamp::of_path(&file).map_err(Fail::Io)? != before {
            return Ok(None);
        }
        Ok(Some((bytes, before)))
    }

    fn write_prot(&self, path: &str, content: &[u8]) -> Result<FileStamp, Fail> {
        let file = self.prot(path);
        if let Some(dir) = file.parent() {
            fs::create_dir_all(dir).map_err(Fail::Io)?;
        }
        write_atomic(&file, content).map_err(Fail::Io)?;
        FileStamp::of_path(&file).map_err(Fail::Io)
    }

    fn note_backup(&mut self, path: &str, outcome: BackupOutcome, deletion: bool) {
        let pair_id = self.pref();
        match outcome {
            BackupOutcome::Stored(v) => {
                self.report.backed_up += 1;
                if deletion {
                    self.report.events.push(EventKind::DeletionBackedUp {
                        pair_id,
                        path: path.to_owned(),
                        version: Some(v),
                    });
                }
            }
            BackupOutcome::NeedsUserDecision(id) => self.report.events.push(EventKind::NeedsBackupDecision {
                pair_id,
                path: path.to_owned(),
                decision_id: format!("{id:016x}"),
            }),
            BackupOutcome::Skipped => {
                if deletion {
                    self.report.events.push(EventKind::DeletionBackedUp {
                        pair_id,
                        path: path.to_owned(),
                        version: None,
                    });
                }
            }
        }
    }

    fn backup_current(&mut self, path: &str, content: &[u8]) -> Result<(), Fail> {
        let outcome =
            self.reg
                .apply_backup_policy(self.pair_id, path, content, self.ctx.store, self.ctx.now, self.ctx.rng)?;
        self.note_backup(path, outcome, false);
        Ok(())
    }

    fn restore(&mut self, path: &str, version: u64) -> Result<(), Fail> {
        let entry = self.entries().get(path).cloned().ok_or(Fail::Registry(RegistryError::UnknownEntry(path.to_owned())))?;
        let backup = entry
            .backups
            .iter()
            .find(|b| b.version_id == version)
            .ok_or(Fail::Registry(RegistryError::NoSuchVersion))?;
        let content = self.ctx.store.read(&backup.content_ref)?;
        if entry.kind == NodeKind::File {
            if let Ok(current) = fs::read(self.prot(path)) {
                if current != content {
                    self.backup_current(path, &current)?;
                }
            }
        }
        let stamp = self.write_prot(path, &content)?;
        {
            let e = self.ensure_entry(path, NodeKind::File)?;
            e.restore_pending = None;
            e.prot_stamp = Some(stamp);
        }
        self.report.restored += 1;
        self.publish(path, &content, stamp)
    }

    fn conflict_split(&mut self, d: Delta) -> Result<(), Fail> {
        let Some(blob) = d.incoming.clone() else { return Ok(()) };
        let Some((local, _)) = self.read_stable(&d.path, d.prot)? else {
            return Ok(());
        };
        let shared_stamp = d.shared.as_ref().map(|s| s.stamp);
        if local == blob.plaintext {
            let stamp = d.prot;
            let e = self.ensure_entry(&d.path, NodeKind::File)?;
            e.prot_stamp = stamp;
            e.shared_stamp = shared_stamp;
            e.shared_tag = Some(blob.tag);
            e.local_head = None;
            return Ok(());
        }
        let user = self.reg.user_id.clone();
        let prot_root = self.prot_root.clone();
        let renamed = conflict_name(&d.path, &user, |c| join_rel(&prot_root, c).exists());
        fs::rename(self.prot(&d.path), self.prot(&renamed)).map_err(Fail::Io)?;
        let stamp = self.write_prot(&d.path, &blob.plaintext)?;
        let e = self.ensure_entry(&d.path, NodeKind::File)?;
        e.prot_stamp = Some(stamp);
        e.shared_stamp = shared_stamp;
        e.shared_tag = Some(blob.tag);
        e.local_head = None;
        self.report.conflicts += 1;
        let pair_id = self.pref();
        self.report.events.push(EventKind::Conflict {
            pair_id,
            path: d.path,
            conflict_path: renamed,
        });
        Ok(())
    }

    fn create_dir(&mut self, side: Side, d: Delta) -> Result<(), Fail> {
        match side {
            Side::Prot => fs::create_dir_all(self.prot(&d.path)).map_err(Fail::Io)?,
            Side::Shared => {
                let encrypted = encrypt_path(&self.key, &d.path)?;
                let target = self.shared(&encrypted);
                if !target.is_dir() {
                    self.check_writable(&target)?;
                    self.check_case(&target)?;
                    fs::create_dir_all(&target)?;
                }
            }
        }
        let e = self.ensure_entry(&d.path, NodeKind::Dir)?;
        e.prot_stamp = Some(DIR_MARK);
        e.shared_stamp = Some(DIR_MARK);
        Ok(())
    }

    fn encrypt_copy(&mut self, d: Delta) -> Result<(), Fail> {
        let Some((content, stamp)) = self.read_stable(&d.path, d.prot)? else {
            return Ok(());
        };
        self.publish(&d.path, &content, stamp)
    }

    fn backup_prot(&mut self, d: Delta) -> Result<(), Fail> {
        let Some(blob) = d.incoming.clone() else { return Ok(()) };
        let result = (|| {
            let Some((current, _)) = self.read_stable(&d.path, d.prot)? else {
                return Ok(());
            };
            if current != blob.plaintext {
                self.ensure_entry(&d.path, NodeKind::File)?;
                self.backup_current(&d.path, &current)?;
            }
            Ok(())
        })();
        if result.is_err() {
            self.blocked.insert(d.path.clone());
        }
        result
    }

    fn decrypt_copy(&mut self, d: Delta) -> Result<(), Fail> {
        let Some(blob) = d.incoming.clone() else { return Ok(()) };
        if self.blocked.contains(&d.path) {
            return Ok(());
        }
        let file = self.prot(&d.path);
        let current = match FileStamp::of_path(&file) {
            Ok(s) => Some(s),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(Fail::Io(e)),
        };
        if current != d.prot {
            // Edited locally since the scan; the next cycle sees both sides changed.
            return Ok(());
        }
        let stamp = match current {
            Some(s) if fs::read(&file).map_err(Fail::Io)? == blob.plaintext => s,
            _ => {
                let s = self.write_prot(&d.path, &blob.plaintext)?;
                self.report.copied += 1;
                s
            }
        };
        let shared_stamp = d.shared.as_ref().map(|s| s.stamp);
        let e = self.ensure_entry(&d.path, NodeKind::File)?;
        e.prot_stamp = Some(stamp);
        e.shared_stamp = shared_stamp;
        e.shared_tag = Some(blob.tag);
        e.local_head = e.local_head.filter(|h| *h == blob.tag);
        if let Some(s) = &d.shared {
            // The file verifies again, so an earlier refusal no longer applies.
            self.reg
                .pairs
                .get_mut(&self.pair_id)
                .expect("pair exists during apply")
                .quarantine
                .remove(&s.rel);
        }
        Ok(())
    }

    fn delete_shared(&mut self, d: Delta) -> Result<(), Fail> {
        let Some(shared) = &d.shared else { return Ok(()) };
        let target = self.shared(&shared.rel);
        self.check_writable(&target)?;
        match FileStamp::of_path(&target) {
            Ok(s) if s == shared.stamp => fs::remove_file(&target)?,
            Ok(_) => return Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        self.forget(&d.path)?;
        self.report.deleted += 1;
        Ok(())
    }

    fn delete_prot(&mut self, d: Delta) -> Result<(), Fail> {
        let Some((content, _)) = self.read_stable(&d.path, d.prot)? else {
            return Ok(());
        };
        let outcome = self.reg.hide_entry(
            self.pair_id,
            &d.path,
            Some(&content),
            self.ctx.store,
            self.ctx.now,
            self.ctx.rng,
        )?;
        fs::remove_file(self.prot(&d.path)).map_err(Fail::Io)?;
        self.note_backup(&d.path, outcome, true);
        self.report.deleted += 1;
        Ok(())
    }

    fn forget(&mut self, path: &str) -> Result<(), Fail> {
        if self.entries().get(path).is_some_and(|e| !e.hidden) {
            self.reg
                .hide_entry(self.pair_id, path, None, self.ctx.store, self.ctx.now, self.ctx.rng)?;
        }
        Ok(())
    }

    fn remove_dir(&mut self, side: Side, d: Delta) -> Result<(), Fail> {
        let target = match side {
            Side::Prot => self.prot(&d.path),
            Side::Shared => {
                let Some(shared) = &d.shared else { return Ok(()) };
                let t = self.shared(&shared.rel);
                self.check_writable(&t)?;
                t
            }
        };
        match fs::remove_dir(&target) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            // Still has members, for instance files added on the other side.
            Err(e) if e.kind() == io::ErrorKind::DirectoryNotEmpty => return Ok(()),
            Err(e) => return Err(e.into()),
        }
        self.forget(&d.path)?;
        self.report.deleted += 1;
        Ok(())
    }
}
