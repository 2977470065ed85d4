use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{Duration, UNIX_EPOCH};

use rand::rngs::StdRng;
use rand::SeedableRng;

use super::*;
use crate::codec::encrypt_path;
use crate::crypto::AlgorithmSpec;
use crate::fsutil::join_rel;
use crate::registry::tests::test_kdkp;
use crate::registry::{BackupPolicy, BackupStore, PairId, Registry};

static MTIME: AtomicI64 = AtomicI64::new(1_900_000_000);

/// Writes a file and gives it a fresh mtime, so edits in quick succession
/// are never hidden by coarse filesystem timestamps.
fn put(path: &Path, content: &[u8]) {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).unwrap();
    }
    fs::write(path, content).unwrap();
    let t = UNIX_EPOCH + Duration::from_secs(MTIME.fetch_add(1, Ordering::Relaxed) as u64);
    fs::File::options().write(true).open(path).unwrap().set_modified(t).unwrap();
}

struct Inst {
    reg: Registry,
    pid: PairId,
    prot: PathBuf,
    shared: PathBuf,
    store: BackupStore,
    rng: StdRng,
}

impl Inst {
    fn cycle(&mut self) -> SyncReport {
        let mut ctx = SyncContext { store: &self.store, rng: &mut self.rng, now: 1_000 };
        run_pair_cycle(&mut self.reg, self.pid, &mut ctx).unwrap()
    }

    fn scan(&self) -> ChangeSet {
        scan_pair(self.reg.pair(self.pid).unwrap()).unwrap()
    }

    fn p(&self, rel: &str) -> PathBuf {
        join_rel(&self.prot, rel)
    }

    fn s(&self, rel: &str) -> PathBuf {
        let key = self.reg.pair(self.pid).unwrap().key.clone().unwrap();
        join_rel(&self.shared, &encrypt_path(&key, rel).unwrap())
    }

    fn entry_hidden(&self, rel: &str) -> bool {
        self.reg.pair(self.pid).unwrap().entry(rel).unwrap().hidden
    }
}

struct World {
    _dir: tempfile::TempDir,
    a: Inst,
    b: Inst,
}

fn inst(root: &Path, user: &str, shared: &Path, seed: u64) -> Inst {
    let prot = root.join(format!("prot-{user}"));
    fs::create_dir_all(&prot).unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut reg = Registry::new(user, test_kdkp());
    let pid = reg.add_pair(&prot, shared, AlgorithmSpec::default(), &mut rng).unwrap();
    Inst {
        pid,
        prot: reg.pair(pid).unwrap().prot_path.clone(),
        shared: reg.pair(pid).unwrap().shared_path.clone(),
        reg,
        store: BackupStore::new(root.join(format!("backups-{user}"))),
        rng,
    }
}

/// Two instances working directly on one shared folder.
fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let shared = dir.path().join("shared");
    fs::create_dir_all(&shared).unwrap();
    let a = inst(dir.path(), "alice", &shared, 1);
    let mut b = inst(dir.path(), "bob", &shared, 2);
    b.reg.pair_mut(b.pid).unwrap().key = a.reg.pair(a.pid).unwrap().key.clone();
    World { _dir: dir, a, b }
}

#[test]
fn idle_pair_reports_nothing() {
    let mut w = world();
    assert!(w.a.scan().is_empty());
    assert!(w.a.cycle().is_empty());
}

#[test]
fn new_prot_file_is_encrypted_once() {
    let mut w = world();
    put(&w.a.p("f.txt"), b"hello");
    let cs = w.a.scan();
    assert_eq!(cs.prot_only.len(), 1);
    assert!(cs.shared_only.is_empty() && cs.both.is_empty() && cs.foreign.is_empty());
    let r = w.a.cycle();
    assert_eq!(r.copied, 1);
    let blob = fs::read(w.a.s("f.txt")).unwrap();
    assert_ne!(blob, b"hello");
    assert!(w.a.cycle().is_empty());
}

#[test]
fn edits_in_both_folders_are_classified_as_both() {
    let mut w = world();
    put(&w.a.p("f.txt"), b"v0");
    w.a.cycle();
    w.b.cycle();
    put(&w.a.p("f.txt"), b"a edit");
    put(&w.b.p("f.txt"), b"b edit");
    w.b.cycle();
    let cs = w.a.scan();
    assert_eq!(cs.both.iter().map(|d| d.path.as_str()).collect::<Vec<_>>(), ["f.txt"]);
    assert!(cs.prot_only.is_empty() && cs.shared_only.is_empty());
}

#[test]
fn plan_follows_decision_table() {
    let d = |path: &str, prot: bool| Delta {
        path: path.into(),
        kind: NodeKind::File,
        prot: prot.then_some(FileStamp { mtime: 1, len: 1 }),
        shared: Some(SharedFile { rel: "X".into(), stamp: FileStamp { mtime: 2, len: 2 } }),
        incoming: None,
    };
    let kinds = |cs: ChangeSet| plan_actions(cs).iter().map(SyncAction::kind).collect::<Vec<_>>();
    assert_eq!(
        kinds(ChangeSet { shared_only: vec![d("f", true)], ..Default::default() }),
        [ActionKind::BackupProt, ActionKind::DecryptCopy]
    );
    assert_eq!(
        kinds(ChangeSet { both: vec![d("f", true)], ..Default::default() }),
        [ActionKind::ConflictSplit]
    );
    assert_eq!(
        kinds(ChangeSet { deletions_shared: vec![d("f", true)], ..Default::default() }),
        [ActionKind::DeleteProtWithBackup]
    );
    assert_eq!(
        kinds(ChangeSet { deletions_prot: vec![d("f", false)], ..Default::default() }),
        [ActionKind::DeleteShared]
    );
    assert_eq!(
        kinds(ChangeSet { prot_only: vec![d("f", true)], ..Default::default() }),
        [ActionKind::EncryptCopy]
    );
}

#[test]
fn directories_are_created_parents_first_and_removed_deepest_first() {
    let dir = |path: &str| Delta {
        path: path.into(),
        kind: NodeKind::Dir,
        prot: Some(FileStamp { mtime: 0, len: 0 }),
        shared: Some(SharedFile { rel: path.into(), stamp: FileStamp { mtime: 0, len: 0 } }),
        incoming: None,
    };
    let created = plan_actions(ChangeSet { prot_only: vec![dir("a/b"), dir("a")], ..Default::default() });
    assert_eq!(created.iter().map(SyncAction::path).collect::<Vec<_>>(), ["a", "a/b"]);
    let removed = plan_actions(ChangeSet { deletions_prot: vec![dir("a"), dir("a/b")], ..Default::default() });
    assert_eq!(removed.iter().map(SyncAction::path).collect::<Vec<_>>(), ["a/b", "a"]);
}

#[test]
fn updates_propagate_with_backup_of_replaced_cleartext() {
    let mut w = world();
    put(&w.a.p("docs/f.txt"), b"first");
    w.a.cycle();
    let r = w.b.cycle();
    assert_eq!(r.copied, 1);
    assert_eq!(fs::read(w.b.p("docs/f.txt")).unwrap(), b"first");

    put(&w.b.p("docs/f.txt"), b"second");
    w.b.cycle();
    let r = w.a.cycle();
    assert_eq!((r.copied, r.backed_up, r.conflicts), (1, 1, 0));
    assert_eq!(fs::read(w.a.p("docs/f.txt")).unwrap(), b"second");
    let e = w.a.reg.pair(w.a.pid).unwrap().entry("docs/f.txt").unwrap().clone();
    assert_eq!(w.a.store.read(&e.backups[0].content_ref).unwrap(), b"first");
    assert!(w.a.cycle().is_empty());
    assert!(w.b.cycle().is_empty());
}

#[test]
fn concurrent_edits_keep_both_versions() {
    let mut w = world();
    put(&w.a.p("budget.xlsx"), b"v0");
    w.a.cycle();
    w.b.cycle();
    put(&w.a.p("budget.xlsx"), b"alice's numbers");
    put(&w.b.p("budget.xlsx"), b"bob's numbers");
    w.b.cycle();
    let r = w.a.cycle();
    assert_eq!(r.conflicts, 1);
    assert!(matches!(&r.events[..], [EventKind::Conflict { conflict_path, .. }] if conflict_path == "budget (conflict of alice).xlsx"));
    w.b.cycle();
    w.a.cycle();
    for i in [&w.a, &w.b] {
        assert_eq!(fs::read(i.p("budget.xlsx")).unwrap(), b"bob's numbers");
        assert_eq!(fs::read(i.p("budget (conflict of alice).xlsx")).unwrap(), b"alice's numbers");
    }
    assert!(w.a.cycle().is_empty());
    assert!(w.b.cycle().is_empty());
}

#[test]
fn silently_replaced_upload_is_detected_as_conflict() {
    // Alice publishes, then Bob's upload overwrites hers in the shared
    // folder before Alice ever sees it, as a last-writer-wins provider would.
    let mut w = world();
    put(&w.a.p("f"), b"v0");
    w.a.cycle();
    w.b.cycle();
    put(&w.a.p("f"), b"alice");
    w.a.cycle();
    put(&w.b.p("f"), b"bob");
    assert_eq!(w.b.scan().both.len(), 1, "bob sees alice's upload as concurrent");
    // Make Bob blind to Alice's upload so his publish overwrites it.
    let shared_now = FileStamp::of_path(&w.b.s("f")).unwrap();
    w.b.reg.pair_mut(w.b.pid).unwrap().entry_mut("f").unwrap().shared_stamp = Some(shared_now);
    let r = w.b.cycle();
    assert_eq!(r.copied, 1);
    let r = w.a.cycle();
    assert_eq!(r.conflicts, 1, "alice's version must not be dropped");
    assert_eq!(fs::read(w.a.p("f (conflict of alice)")).unwrap(), b"alice");
    assert_eq!(fs::read(w.a.p("f")).unwrap(), b"bob");
}

#[test]
fn tampered_blob_is_quarantined_once_and_never_decrypted() {
    let mut w = world();
    put(&w.a.p("f.txt"), b"precious");
    w.a.cycle();
    w.b.cycle();
    let target = w.a.s("f.txt");
    let mut bytes = fs::read(&target).unwrap();
    bytes[30] ^= 0x40;
    put(&target, &bytes);
    for inst in [&mut w.a, &mut w.b] {
        let r = inst.cycle();
        assert_eq!(r.quarantined, 1);
        assert_eq!(fs::read(inst.p("f.txt")).unwrap(), b"precious");
        assert!(inst.cycle().is_empty());
        assert!(target.exists(), "foreign data stays in place");
    }
}

#[test]
fn undecryptable_name_is_quarantined() {
    let mut w = world();
    put(&w.a.shared.join("notes.txt"), b"dropped in by someone");
    let r = w.a.cycle();
    assert_eq!(r.quarantined, 1);
    assert!(fs::read_dir(&w.a.prot).unwrap().next().is_none());
    assert!(w.a.shared.join("notes.txt").exists());
    assert_eq!(w.a.reg.pair(w.a.pid).unwrap().quarantine.len(), 1);
}

#[test]
fn newer_prot_version_replaces_tampered_shared_file() {
    let mut w = world();
    put(&w.a.p("f"), b"one");
    w.a.cycle();
    let mut bytes = fs::read(w.a.s("f")).unwrap();
    bytes[0] ^= 1;
    put(&w.a.s("f"), &bytes);
    put(&w.a.p("f"), b"two");
    let r = w.a.cycle();
    assert_eq!((r.quarantined, r.copied), (1, 1));
    w.b.cycle();
    assert_eq!(fs::read(w.b.p("f")).unwrap(), b"two");
    assert!(w.a.reg.pair(w.a.pid).unwrap().quarantine.is_empty());
}

#[test]
fn shared_deletion_backs_up_and_restore_brings_it_back() {
    let mut w = world();
    put(&w.a.p("f.txt"), b"keep me");
    w.a.cycle();
    w.b.cycle();
    fs::remove_file(w.b.p("f.txt")).unwrap();
    let r = w.b.cycle();
    assert_eq!(r.deleted, 1);
    assert!(!w.b.s("f.txt").exists());
    assert!(w.b.entry_hidden("f.txt"));

    let r = w.a.cycle();
    assert_eq!((r.deleted, r.backed_up), (1, 1));
    assert!(matches!(&r.events[..], [EventKind::DeletionBackedUp { version: Some(1), .. }]));
    assert!(!w.a.p("f.txt").exists());
    assert!(w.a.entry_hidden("f.txt"));
    assert!(w.a.cycle().is_empty(), "hidden entries stay hidden");

    w.a.reg.restore_entry(w.a.pid, "f.txt", None, &w.a.store).unwrap();
    let r = w.a.cycle();
    assert_eq!(r.restored, 1);
    assert_eq!(fs::read(w.a.p("f.txt")).unwrap(), b"keep me");
    w.b.cycle();
    assert_eq!(fs::read(w.b.p("f.txt")).unwrap(), b"keep me");
    assert!(w.a.cycle().is_empty());
}

#[test]
fn modification_beats_concurrent_deletion() {
    let mut w = world();
    put(&w.a.p("f"), b"v0");
    w.a.cycle();
    w.b.cycle();
    fs::remove_file(w.b.p("f")).unwrap();
    put(&w.a.p("f"), b"v1 longer");
    w.a.cycle();
    let r = w.b.cycle();
    assert_eq!(r.deleted, 0);
    assert_eq!(fs::read(w.b.p("f")).unwrap(), b"v1 longer");
}

#[test]
fn directories_are_mirrored_and_removed_when_empty() {
    let mut w = world();
    fs::create_dir_all(w.a.p("empty/inner")).unwrap();
    put(&w.a.p("full/x"), b"x");
    w.a.cycle();
    w.b.cycle();
    assert!(w.b.p("empty/inner").is_dir());
    assert!(w.b.p("full/x").is_file());
    assert!(w.a.cycle().is_empty() && w.b.cycle().is_empty());

    fs::remove_dir_all(w.a.p("full")).unwrap();
    fs::remove_dir_all(w.a.p("empty")).unwrap();
    w.a.cycle();
    assert!(fs::read_dir(&w.a.shared).unwrap().next().is_none(), "shared side emptied");
    w.b.cycle();
    assert!(fs::read_dir(&w.b.prot).unwrap().next().is_none());
    assert!(w.a.cycle().is_empty() && w.b.cycle().is_empty());
}

#[cfg(unix)]
#[test]
fn read_only_shared_folder_reports_error_and_keeps_prot_changes() {
    use std::os::unix::fs::PermissionsExt;
    let mut w = world();
    fs::set_permissions(&w.a.shared, fs::Permissions::from_mode(0o555)).unwrap();
    put(&w.a.p("f"), b"local work");
    let r = w.a.cycle();
    assert!(r.read_only());
    assert_eq!(fs::read(w.a.p("f")).unwrap(), b"local work");
    fs::set_permissions(&w.a.shared, fs::Permissions::from_mode(0o755)).unwrap();
    assert_eq!(w.a.cycle().copied, 1);
}

#[test]
fn case_insensitive_alias_is_refused() {
    let mut w = world();
    let target = w.a.s("f");
    let name = target.file_name().unwrap().to_str().unwrap();
    let alias: String = name
        .chars()
        .map(|c| if c.is_ascii_lowercase() { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect();
    assert_ne!(alias, name);
    put(&w.a.shared.join(&alias), b"other");
    put(&w.a.p("f"), b"mine");
    let r = w.a.cycle();
    assert!(r.errors.iter().any(|e| e.error == SyncErrorKind::CaseCollision));
    assert!(!target.exists());
}

#[test]
fn ask_policy_holds_replaced_content_for_a_decision() {
    let mut w = world();
    w.a.reg.set_policy(w.a.pid, None, BackupPolicy::AskUser).unwrap();
    put(&w.a.p("f"), b"one");
    w.a.cycle();
    w.b.cycle();
    put(&w.b.p("f"), b"two!");
    w.b.cycle();
    let r = w.a.cycle();
    assert!(matches!(&r.events[..], [EventKind::NeedsBackupDecision { path, .. }] if path == "f"));
    assert_eq!(w.a.reg.pair(w.a.pid).unwrap().pending_backups.len(), 1);
}

#[test]
fn conflict_names() {
    let none = |_: &str| false;
    assert_eq!(conflict_name("budget.xlsx", "alice", none), "budget (conflict of alice).xlsx");
    assert_eq!(conflict_name("a/b/notes", "bob", none), "a/b/notes (conflict of bob)");
    assert_eq!(conflict_name(".bashrc", "bob", none), ".bashrc (conflict of bob)");
    assert_eq!(
        conflict_name("budget.xlsx", "alice", |c| c == "budget (conflict of alice).xlsx"),
        "budget (conflict of alice) (2).xlsx"
    );
    assert_eq!(
        conflict_name("x.tar.gz", "al", |c| !c.ends_with("(3).gz")),
        "x.tar (conflict of al) (3).gz"
    );
}

#[test]
fn awaiting_key_pair_is_not_scanned() {
    let mut w = world();
    w.a.reg.pair_mut(w.a.pid).unwrap().key = None;
    assert_eq!(
        scan_pair(w.a.reg.pair(w.a.pid).unwrap()).unwrap_err(),
        SyncError::AwaitingKey
    );
}

fn tree(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

const OP_PATHS: [&str; 4] = ["a.txt", "b.txt", "d/c.txt", "d/e/f.txt"];

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    /// Any interleaving of edits on two instances settles with identical prot
    /// folders, and an extra cycle then has nothing to do.
    #[test]
    fn two_instances_settle_to_identical_trees(
        ops in proptest::collection::vec(
            (proptest::prelude::any::<bool>(), 0..OP_PATHS.len(), proptest::option::of(proptest::collection::vec(proptest::prelude::any::<u8>(), 0..48))),
            1..16,
        ),
    ) {
        let mut w = world();
        for (on_b, path, content) in ops {
            let inst = if on_b { &mut w.b } else { &mut w.a };
            let target = inst.p(OP_PATHS[path]);
            match content {
                Some(bytes) => put(&target, &bytes),
                None => {
                    let _ = fs::remove_file(&target);
                }
            }
            inst.cycle();
        }
        for _ in 0..3 {
            w.a.cycle();
            w.b.cycle();
        }
        proptest::prop_assert_eq!(tree(&w.a.prot), tree(&w.b.prot));
        proptest::prop_assert!(w.a.cycle().is_empty());
        proptest::prop_assert!(w.b.cycle().is_empty());
    }
}
