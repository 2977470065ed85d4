use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::sync::Arc;

use crate::codec::decrypt_path;
use crate::crypto::{open_content, PairKey};
use crate::fsutil::{join_rel, walk, FileStamp, Node, NodeKind};
use crate::registry::{is_protocol_name, Pair, RegistryEntry};

use super::{ChangeSet, Delta, Foreign, SharedFile, SyncError, VerifiedBlob};

/// Compares both folders of an active pair with its registry entries.
///
/// Shared files are only read when their stamp moved since the last cycle,
/// so an idle scan costs two directory walks.
pub fn scan_pair(pair: &Pair) -> Result<ChangeSet, SyncError> {
    let key = pair.key.as_ref().ok_or(SyncError::AwaitingKey)?;
    let prot_nodes = walk(&pair.prot_path, &|_| false)
        .map_err(|e| SyncError::FolderUnreadable(format!("{}: {e}", pair.prot_path.display())))?;
    let shared_nodes = walk(&pair.shared_path, &is_protocol_name)
        .map_err(|e| SyncError::FolderUnreadable(format!("{}: {e}", pair.shared_path.display())))?;

    let mut cs = ChangeSet::default();
    let prot: BTreeMap<String, Node> = prot_nodes.into_iter().map(|n| (n.rel.clone(), n)).collect();
    let mut shared: BTreeMap<String, (Node, String)> = BTreeMap::new();
    for node in shared_nodes {
        match decrypt_path(key, &node.rel) {
            Ok(clear) => {
                shared.insert(clear, (node.clone(), node.rel));
            }
            Err(e) => {
                if !already_quarantined(pair, &node.rel, node.stamp) {
                    cs.foreign.push(Foreign {
                        shared_rel: node.rel,
                        stamp: node.stamp,
                        reason: format!("name: {e}"),
                    });
                }
            }
        }
    }

    let mut paths: BTreeSet<&str> = prot.keys().map(String::as_str).collect();
    paths.extend(shared.keys().map(String::as_str));
    paths.extend(pair.entries.values().filter(|e| !e.hidden).map(|e| e.cleartext_path.as_str()));

    for path in paths {
        let entry = pair.entries.get(path);
        if let Some(v) = entry.and_then(|e| e.restore_pending) {
            cs.restores.push((path.to_owned(), v));
            continue;
        }
        let p = prot.get(path);
        let s = shared.get(path);
        let kind = p.or(s.map(|(n, _)| n)).map(|n| n.kind).or(entry.map(|e| e.kind));
        let Some(kind) = kind else { continue };
        if let (Some(p), Some((s, _))) = (p, s) {
            if p.kind != s.kind {
                log::warn!("{path} is a file on one side and a directory on the other; skipped");
                continue;
            }
        }
        let live = entry.filter(|e| !e.hidden && e.kind == kind);
        let delta = Delta {
            path: path.to_owned(),
            kind,
            prot: p.map(|n| n.stamp),
            shared: s.map(|(n, rel)| SharedFile { rel: rel.clone(), stamp: n.stamp }),
            incoming: None,
        };
        match kind {
            NodeKind::Dir => classify_dir(delta, live, &mut cs),
            NodeKind::File => classify_file(pair, key, delta, live, &mut cs),
        }
    }
    Ok(cs)
}

fn already_quarantined(pair: &Pair, shared_rel: &str, stamp: FileStamp) -> bool {
    pair.quarantine.get(shared_rel).is_some_and(|q| q.stamp == stamp)
}

fn classify_dir(delta: Delta, entry: Option<&RegistryEntry>, cs: &mut ChangeSet) {
    let (p, s) = (delta.prot.is_some(), delta.shared.is_some());
    let Some(e) = entry else {
        match (p, s) {
            (true, true) => cs.both.push(delta),
            (true, false) => cs.prot_only.push(delta),
            (false, true) => cs.shared_only.push(delta),
            (false, false) => {}
        }
        return;
    };
    match (p, s) {
        (true, true) => {
            if e.prot_stamp.is_none() || e.shared_stamp.is_none() {
                cs.both.push(delta);
            }
        }
        (true, false) if e.shared_stamp.is_some() => cs.deletions_shared.push(delta),
        (true, false) => cs.prot_only.push(delta),
        (false, true) if e.prot_stamp.is_some() => cs.deletions_prot.push(delta),
        (false, true) => cs.shared_only.push(delta),
        (false, false) => cs.deletions_prot.push(delta),
    }
}

enum Incoming {
    Verified(Arc<VerifiedBlob>),
    Foreign,
    /// Previously quarantined with the same stamp.
    Known,
}

fn read_incoming(pair: &Pair, key: &PairKey, shared: &SharedFile, cs: &mut ChangeSet) -> Incoming {
    if already_quarantined(pair, &shared.rel, shared.stamp) {
        return Incoming::Known;
    }
    let reason = match fs::read(join_rel(&pair.shared_path, &shared.rel)) {
        Ok(bytes) => match open_content(key, &bytes) {
            Ok(opened) => {
                return Incoming::Verified(Arc::new(VerifiedBlob {
                    plaintext: opened.plaintext,
                    tag: opened.tag,
                    parent: opened.parent,
                }))
            }
            Err(e) => format!("content: {e}"),
        },
        Err(e) => format!("unreadable: {e}"),
    };
    cs.foreign.push(Foreign {
        shared_rel: shared.rel.clone(),
        stamp: shared.stamp,
        reason,
    });
    Incoming::Foreign
}

fn classify_file(pair: &Pair, key: &PairKey, mut delta: Delta, entry: Option<&RegistryEntry>, cs: &mut ChangeSet) {
    let p_changed = entry.is_none_or(|e| delta.prot != e.prot_stamp);
    let s_changed = entry.is_none_or(|e| delta.shared.as_ref().map(|s| s.stamp) != e.shared_stamp);

    let incoming = match &delta.shared {
        Some(s) if s_changed => Some(read_incoming(pair, key, s, cs)),
        _ => None,
    };
    let verified = match &incoming {
        Some(Incoming::Verified(b)) => Some(b.clone()),
        _ => None,
    };
    let shared_unusable = matches!(incoming, Some(Incoming::Foreign | Incoming::Known));
    delta.incoming = verified.clone();

    if shared_unusable {
        // A refused shared file never causes a local change, but a newer
        // prot version may replace it.
        if delta.prot.is_some() && p_changed {
            delta.incoming = None;
            cs.prot_only.push(delta);
        }
        return;
    }

    let Some(e) = entry else {
        match (delta.prot.is_some(), delta.shared.is_some()) {
            (true, true) => cs.both.push(delta),
            (true, false) => cs.prot_only.push(delta),
            (false, true) => cs.shared_only.push(delta),
            (false, false) => {}
        }
        return;
    };

    match (delta.prot.is_some(), delta.shared.is_some()) {
        (true, true) => match (p_changed, s_changed) {
            (false, false) => {}
            (true, false) => cs.prot_only.push(delta),
            (false, true) => {
                let blob = verified.expect("changed shared file was read");
                let diverged = e
                    .local_head
                    .is_some_and(|head| blob.tag != head && blob.parent != Some(head));
                if diverged && Some(blob.tag) != e.shared_tag {
                    cs.both.push(delta);
                } else {
                    cs.shared_only.push(delta);
                }
            }
            (true, true) => {
                let blob = verified.expect("changed shared file was read");
                if Some(blob.tag) == e.shared_tag {
                    cs.prot_only.push(delta);
                } else {
                    cs.both.push(delta);
                }
            }
        },
        (false, true) => {
            let remote_edit = verified.as_ref().is_some_and(|b| Some(b.tag) != e.shared_tag);
            if e.prot_stamp.is_none() || remote_edit {
                if delta.incoming.is_none() {
                    delta.incoming = match read_incoming(pair, key, delta.shared.as_ref().unwrap(), cs) {
                        Incoming::Verified(b) => Some(b),
                        _ => return,
                    };
                }
                cs.shared_only.push(delta);
            } else {
                cs.deletions_prot.push(delta);
            }
        }
        (true, false) => {
            if p_changed || e.shared_stamp.is_none() {
                cs.prot_only.push(delta);
            } else {
                cs.deletions_shared.push(delta);
            }
        }
        (false, false) => cs.deletions_prot.push(delta),
    }
}
