use crate::fsutil::NodeKind;

use super::{ChangeSet, Delta, Side, SyncAction};

/// Orders the work for one pass: quarantine and restores first, then
/// conflicts, directory creation (parents first), copies in both
/// directions, file deletions and finally directory removal (deepest first).
pub fn plan_actions(changes: ChangeSet) -> Vec<SyncAction> {
    let ChangeSet {
        prot_only,
        shared_only,
        both,
        deletions_prot,
        deletions_shared,
        foreign,
        restores,
    } = changes;

    let mut out: Vec<SyncAction> = foreign.into_iter().map(SyncAction::Quarantine).collect();
    out.extend(restores.into_iter().map(|(path, version)| SyncAction::Restore { path, version }));

    let (both_dirs, both_files) = split_kind(both);
    let (prot_dirs, prot_files) = split_kind(prot_only);
    let (shared_dirs, shared_files) = split_kind(shared_only);
    let (del_prot_dirs, del_prot_files) = split_kind(deletions_prot);
    let (del_shared_dirs, del_shared_files) = split_kind(deletions_shared);

    out.extend(both_files.into_iter().map(SyncAction::ConflictSplit));

    let mut creates: Vec<(Side, Delta)> = Vec::new();
    creates.extend(prot_dirs.into_iter().map(|d| (Side::Shared, d)));
    creates.extend(shared_dirs.into_iter().map(|d| (Side::Prot, d)));
    creates.extend(both_dirs.into_iter().map(|d| (Side::Shared, d)));
    creates.sort_by(|a, b| a.1.path.cmp(&b.1.path));
    out.extend(creates.into_iter().map(|(side, delta)| SyncAction::CreateDir { side, delta }));

    out.extend(prot_files.into_iter().map(SyncAction::EncryptCopy));
    for d in shared_files {
        if d.prot.is_some() {
            out.push(SyncAction::BackupProt(d.clone()));
        }
        out.push(SyncAction::DecryptCopy(d));
    }

    for d in del_prot_files {
        out.push(if d.shared.is_some() { SyncAction::DeleteShared(d) } else { SyncAction::Forget(d) });
    }
    for d in del_shared_files {
        out.push(if d.prot.is_some() { SyncAction::DeleteProtWithBackup(d) } else { SyncAction::Forget(d) });
    }

    let mut removals: Vec<SyncAction> = Vec::new();
    for d in del_prot_dirs {
        removals.push(if d.shared.is_some() {
            SyncAction::RemoveDir { side: Side::Shared, delta: d }
        } else {
            SyncAction::Forget(d)
        });
    }
    for d in del_shared_dirs {
        removals.push(SyncAction::RemoveDir { side: Side::Prot, delta: d });
    }
    removals.sort_by(|a, b| depth(b.path()).cmp(&depth(a.path())).then_with(|| b.path().cmp(a.path())));
    out.extend(removals);
    out
}

fn depth(path: &str) -> usize {
    path.matches('/').count()
}

fn split_kind(deltas: Vec<Delta>) -> (Vec<Delta>, Vec<Delta>) {
    deltas.into_iter().partition(|d| d.kind == NodeKind::Dir)
}
