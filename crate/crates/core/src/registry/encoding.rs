//! Deterministic TLV form of the registry. Field order is fixed; optional
//! fields are simply absent. See `docs/formats.md` for the tag table.

use std::collections::BTreeMap;
use std::path::PathBuf;

use super::*;
use crate::crypto::AlgorithmSpec;
use crate::tlv::{TlvError, TlvReader, TlvWriter};

pub const REGISTRY_FORMAT_VERSION: u8 = 1;

const T_FORMAT: u16 = 0x0100;
const T_USER: u16 = 0x0101;
const T_KDKP: u16 = 0x0102;
const T_SETTINGS: u16 = 0x0103;
const T_PAIR: u16 = 0x0104;
const T_PENDING_REQUEST: u16 = 0x0105;

const T_SCAN_PERIOD: u16 = 0x0110;
const T_DEFAULT_POLICY: u16 = 0x0111;
const T_ORPHAN_TIMEOUT: u16 = 0x0112;
const T_RESPONSE_WAIT: u16 = 0x0113;

const T_REQ_ID: u16 = 0x0120;
const T_REQ_PAIR: u16 = 0x0121;
const T_REQ_SHARED: u16 = 0x0122;
const T_REQ_PLACED: u16 = 0x0123;
const T_REQ_BYTES: u16 = 0x0124;

const T_POLICY_MODE: u16 = 0x0130;
const T_POLICY_N: u16 = 0x0131;

const T_PAIR_ID: u16 = 0x0200;
const T_PROT: u16 = 0x0201;
const T_SHARED: u16 = 0x0202;
const T_KEY: u16 = 0x0203;
const T_PAIR_POLICY: u16 = 0x0204;
const T_ENTRY: u16 = 0x0205;
const T_ORPHAN: u16 = 0x0206;
const T_QUARANTINE: u16 = 0x0207;
const T_PENDING_BACKUP: u16 = 0x0208;

const T_CIPHER_SPEC: u16 = 0x0210;
const T_MAC_SPEC: u16 = 0x0211;
const T_SECRET: u16 = 0x0212;

const T_ORPHAN_NAME: u16 = 0x0220;
const T_ORPHAN_SEEN: u16 = 0x0221;

const T_Q_PATH: u16 = 0x0230;
const T_Q_STAMP: u16 = 0x0231;
const T_Q_SINCE: u16 = 0x0232;
const T_Q_REASON: u16 = 0x0233;

const T_PB_ID: u16 = 0x0240;
const T_PB_ENTRY: u16 = 0x0241;
const T_PB_PATH: u16 = 0x0242;
const T_PB_AT: u16 = 0x0243;
const T_PB_LEN: u16 = 0x0244;

const T_E_ID: u16 = 0x0300;
const T_E_CLEAR: u16 = 0x0301;
const T_E_ENC: u16 = 0x0302;
const T_E_KIND: u16 = 0x0303;
const T_E_PROT_STAMP: u16 = 0x0304;
const T_E_SHARED_STAMP: u16 = 0x0305;
const T_E_HIDDEN: u16 = 0x0306;
const T_E_BACKUP: u16 = 0x0307;
const T_E_NEXT_VERSION: u16 = 0x0308;
const T_E_POLICY: u16 = 0x0309;
const T_E_SHARED_TAG: u16 = 0x030A;
const T_E_LOCAL_HEAD: u16 = 0x030B;
const T_E_RESTORE: u16 = 0x030C;

const T_STAMP_MTIME: u16 = 0x0310;
const T_STAMP_LEN: u16 = 0x0311;

const T_B_VERSION: u16 = 0x0320;
const T_B_AT: u16 = 0x0321;
const T_B_REF: u16 = 0x0322;
const T_B_LEN: u16 = 0x0323;

type R<T> = Result<T, RegistryError>;

fn corrupt(e: impl std::fmt::Display) -> RegistryError {
    RegistryError::CorruptRegistry(e.to_string())
}

impl From<TlvError> for RegistryError {
    fn from(e: TlvError) -> Self {
        corrupt(e)
    }
}

fn path_str(p: &std::path::Path) -> &str {
    p.to_str().expect("registry paths are UTF-8")
}

fn put_policy(w: &mut TlvWriter, tag: u16, p: BackupPolicy) {
    w.nested(tag, |w| match p {
        BackupPolicy::Never => {
            w.put_u8(T_POLICY_MODE, 0);
        }
        BackupPolicy::KeepAtMost(n) => {
            w.put_u8(T_POLICY_MODE, 1).put_u32(T_POLICY_N, n);
        }
        BackupPolicy::AskUser => {
            w.put_u8(T_POLICY_MODE, 2);
        }
    });
}

fn read_policy(raw: &[u8]) -> R<BackupPolicy> {
    let mut r = TlvReader::new(raw);
    let p = match r.expect_u8(T_POLICY_MODE)? {
        0 => BackupPolicy::Never,
        1 => BackupPolicy::keep(r.expect_u32(T_POLICY_N)?).map_err(corrupt)?,
        2 => BackupPolicy::AskUser,
        m => return Err(corrupt(format!("unknown policy mode {m}"))),
    };
    r.finish()?;
    Ok(p)
}

fn put_stamp(w: &mut TlvWriter, tag: u16, s: &FileStamp) {
    w.nested(tag, |w| {
        w.put_i64(T_STAMP_MTIME, s.mtime).put_u64(T_STAMP_LEN, s.len);
    });
}

fn read_stamp(raw: &[u8]) -> R<FileStamp> {
    let mut r = TlvReader::new(raw);
    let s = FileStamp {
        mtime: r.expect_i64(T_STAMP_MTIME)?,
        len: r.expect_u64(T_STAMP_LEN)?,
    };
    r.finish()?;
    Ok(s)
}

fn read_tag(raw: &[u8]) -> R<VersionTag> {
    Ok(VersionTag(raw.try_into().map_err(|_| corrupt("version tag length"))?))
}

fn put_entry(w: &mut TlvWriter, e: &RegistryEntry) {
    w.nested(T_ENTRY, |w| {
        w.put_u64(T_E_ID, e.id)
            .put_str(T_E_CLEAR, &e.cleartext_path)
            .put_str(T_E_ENC, &e.encrypted_path)
            .put_u8(
                T_E_KIND,
                match e.kind {
                    NodeKind::File => 0,
                    NodeKind::Dir => 1,
                },
            );
        if let Some(s) = &e.prot_stamp {
            put_stamp(w, T_E_PROT_STAMP, s);
        }
        if let Some(s) = &e.shared_stamp {
            put_stamp(w, T_E_SHARED_STAMP, s);
        }
        w.put_bool(T_E_HIDDEN, e.hidden);
        for b in &e.backups {
            w.nested(T_E_BACKUP, |w| {
                w.put_u64(T_B_VERSION, b.version_id)
                    .put_i64(T_B_AT, b.captured_at)
                    .put_str(T_B_REF, &b.content_ref)
                    .put_u64(T_B_LEN, b.length);
            });
        }
        w.put_u64(T_E_NEXT_VERSION, e.next_version);
        if let Some(p) = e.policy {
            put_policy(w, T_E_POLICY, p);
        }
        if let Some(t) = &e.shared_tag {
            w.put(T_E_SHARED_TAG, &t.0);
        }
        if let Some(t) = &e.local_head {
            w.put(T_E_LOCAL_HEAD, &t.0);
        }
        if let Some(v) = e.restore_pending {
            w.put_u64(T_E_RESTORE, v);
        }
    });
}

fn read_entry(raw: &[u8]) -> R<RegistryEntry> {
    let mut r = TlvReader::new(raw);
    let id = r.expect_u64(T_E_ID)?;
    let cleartext_path = r.expect_str(T_E_CLEAR)?.to_owned();
    let encrypted_path = r.expect_str(T_E_ENC)?.to_owned();
    let kind = match r.expect_u8(T_E_KIND)? {
        0 => NodeKind::File,
        1 => NodeKind::Dir,
        k => return Err(corrupt(format!("unknown entry kind {k}"))),
    };
    let prot_stamp = r.optional(T_E_PROT_STAMP)?.map(read_stamp).transpose()?;
    let shared_stamp = r.optional(T_E_SHARED_STAMP)?.map(read_stamp).transpose()?;
    let hidden = r.expect_bool(T_E_HIDDEN)?;
    let backups = r
        .repeated(T_E_BACKUP)?
        .into_iter()
        .map(|raw| {
            let mut r = TlvReader::new(raw);
            let b = BackupVersion {
                version_id: r.expect_u64(T_B_VERSION)?,
                captured_at: r.expect_i64(T_B_AT)?,
                content_ref: r.expect_str(T_B_REF)?.to_owned(),
                length: r.expect_u64(T_B_LEN)?,
            };
            r.finish()?;
            Ok(b)
        })
        .collect::<R<Vec<_>>>()?;
    let next_version = r.expect_u64(T_E_NEXT_VERSION)?;
    let policy = r.optional(T_E_POLICY)?.map(read_policy).transpose()?;
    let shared_tag = r.optional(T_E_SHARED_TAG)?.map(read_tag).transpose()?;
    let local_head = r.optional(T_E_LOCAL_HEAD)?.map(read_tag).transpose()?;
    let restore_pending = r
        .optional(T_E_RESTORE)?
        .map(|v| crate::tlv::as_u64(T_E_RESTORE, v))
        .transpose()?;
    r.finish()?;
    Ok(RegistryEntry {
        id,
        cleartext_path,
        encrypted_path,
        kind,
        prot_stamp,
        shared_stamp,
        hidden,
        backups,
        next_version,
        policy,
        shared_tag,
        local_head,
        restore_pending,
    })
}

fn put_pair(w: &mut TlvWriter, p: &Pair) {
    w.nested(T_PAIR, |w| {
        w.put_u64(T_PAIR_ID, p.id)
            .put_str(T_PROT, path_str(&p.prot_path))
            .put_str(T_SHARED, path_str(&p.shared_path));
        if let Some(k) = &p.key {
            w.nested(T_KEY, |w| {
                w.put_str(T_CIPHER_SPEC, &k.spec().cipher_spec())
                    .put_str(T_MAC_SPEC, &k.spec().mac_spec())
                    .put(T_SECRET, k.secret());
            });
        }
        if let Some(pol) = p.policy {
            put_policy(w, T_PAIR_POLICY, pol);
        }
        for e in p.entries.values() {
            put_entry(w, e);
        }
        for (name, seen) in &p.orphans_seen {
            w.nested(T_ORPHAN, |w| {
                w.put_str(T_ORPHAN_NAME, name).put_i64(T_ORPHAN_SEEN, *seen);
            });
        }
        for q in p.quarantine.values() {
            w.nested(T_QUARANTINE, |w| {
                w.put_str(T_Q_PATH, &q.shared_path);
                put_stamp(w, T_Q_STAMP, &q.stamp);
                w.put_i64(T_Q_SINCE, q.since).put_str(T_Q_REASON, &q.reason);
            });
        }
        for b in p.pending_backups.values() {
            w.nested(T_PENDING_BACKUP, |w| {
                w.put_u64(T_PB_ID, b.id)
                    .put_u64(T_PB_ENTRY, b.entry_id)
                    .put_str(T_PB_PATH, &b.cleartext_path)
                    .put_i64(T_PB_AT, b.captured_at)
                    .put_u64(T_PB_LEN, b.length);
            });
        }
    });
}

fn read_pair(raw: &[u8]) -> R<Pair> {
    let mut r = TlvReader::new(raw);
    let id = r.expect_u64(T_PAIR_ID)?;
    let prot_path = PathBuf::from(r.expect_str(T_PROT)?);
    let shared_path = PathBuf::from(r.expect_str(T_SHARED)?);
    let key = r
        .optional(T_KEY)?
        .map(|raw| {
            let mut r = TlvReader::new(raw);
            let spec = AlgorithmSpec::parse(r.expect_str(T_CIPHER_SPEC)?, r.expect_str(T_MAC_SPEC)?).map_err(corrupt)?;
            let key = PairKey::new(r.expect(T_SECRET)?.to_vec(), spec).map_err(corrupt)?;
            r.finish()?;
            Ok::<_, RegistryError>(key)
        })
        .transpose()?;
    let policy = r.optional(T_PAIR_POLICY)?.map(read_policy).transpose()?;
    let mut entries = BTreeMap::new();
    for raw in r.repeated(T_ENTRY)? {
        let e = read_entry(raw)?;
        if entries.insert(e.cleartext_path.clone(), e).is_some() {
            return Err(corrupt("duplicate entry path"));
        }
    }
    let mut orphans_seen = BTreeMap::new();
    for raw in r.repeated(T_ORPHAN)? {
        let mut r = TlvReader::new(raw);
        orphans_seen.insert(r.expect_str(T_ORPHAN_NAME)?.to_owned(), r.expect_i64(T_ORPHAN_SEEN)?);
        r.finish()?;
    }
    let mut quarantine = BTreeMap::new();
    for raw in r.repeated(T_QUARANTINE)? {
        let mut r = TlvReader::new(raw);
        let q = QuarantineRecord {
            shared_path: r.expect_str(T_Q_PATH)?.to_owned(),
            stamp: read_stamp(r.expect(T_Q_STAMP)?)?,
            since: r.expect_i64(T_Q_SINCE)?,
            reason: r.expect_str(T_Q_REASON)?.to_owned(),
        };
        r.finish()?;
        quarantine.insert(q.shared_path.clone(), q);
    }
    let mut pending_backups = BTreeMap::new();
    for raw in r.repeated(T_PENDING_BACKUP)? {
        let mut r = TlvReader::new(raw);
        let b = PendingBackup {
            id: r.expect_u64(T_PB_ID)?,
            entry_id: r.expect_u64(T_PB_ENTRY)?,
            cleartext_path: r.expect_str(T_PB_PATH)?.to_owned(),
            captured_at: r.expect_i64(T_PB_AT)?,
            length: r.expect_u64(T_PB_LEN)?,
        };
        r.finish()?;
        pending_backups.insert(b.id, b);
    }
    r.finish()?;
    Ok(Pair {
        id,
        prot_path,
        shared_path,
        key,
        policy,
        entries,
        orphans_seen,
        quarantine,
        pending_backups,
    })
}

pub fn encode_registry(reg: &Registry) -> Vec<u8> {
    let mut w = TlvWriter::new();
    w.put_u8(T_FORMAT, REGISTRY_FORMAT_VERSION)
        .put_str(T_USER, &reg.user_id)
        .put(T_KDKP, &reg.kdkp.to_pkcs8_der());
    w.nested(T_SETTINGS, |w| {
        w.put_u64(T_SCAN_PERIOD, reg.settings.scan_period_secs);
        put_policy(w, T_DEFAULT_POLICY, reg.settings.default_policy);
        w.put_i64(T_ORPHAN_TIMEOUT, reg.settings.orphan_timeout_secs)
            .put_i64(T_RESPONSE_WAIT, reg.settings.response_wait_secs);
    });
    for p in reg.pairs.values() {
        put_pair(&mut w, p);
    }
    for req in reg.pending_requests.values() {
        w.nested(T_PENDING_REQUEST, |w| {
            w.put(T_REQ_ID, &req.id.0)
                .put_u64(T_REQ_PAIR, req.pair_id)
                .put_str(T_REQ_SHARED, path_str(&req.shared_path))
                .put_i64(T_REQ_PLACED, req.placed_at)
                .put(T_REQ_BYTES, &req.request_bytes);
        });
    }
    w.finish()
}

pub fn decode_registry(bytes: &[u8]) -> R<Registry> {
    let mut r = TlvReader::new(bytes);
    if r.expect_u8(T_FORMAT)? != REGISTRY_FORMAT_VERSION {
        return Err(RegistryError::UnsupportedVersion);
    }
    let user_id = r.expect_str(T_USER)?.to_owned();
    let kdkp = Kdkp::from_pkcs8_der(r.expect(T_KDKP)?).map_err(corrupt)?;
    let settings = {
        let mut s = TlvReader::new(r.expect(T_SETTINGS)?);
        let settings = Settings {
            scan_period_secs: s.expect_u64(T_SCAN_PERIOD)?,
            default_policy: read_policy(s.expect(T_DEFAULT_POLICY)?)?,
            orphan_timeout_secs: s.expect_i64(T_ORPHAN_TIMEOUT)?,
            response_wait_secs: s.expect_i64(T_RESPONSE_WAIT)?,
        };
        s.finish()?;
        settings
    };
    let mut pairs = BTreeMap::new();
    for raw in r.repeated(T_PAIR)? {
        let p = read_pair(raw)?;
        if pairs.values().any(|q: &Pair| q.shared_path == p.shared_path) {
            return Err(corrupt("shared folder listed twice"));
        }
        pairs.insert(p.id, p);
    }
    let mut pending_requests = BTreeMap::new();
    for raw in r.repeated(T_PENDING_REQUEST)? {
        let mut r = TlvReader::new(raw);
        let id = crate::keydist::ProtocolId(r.expect(T_REQ_ID)?.try_into().map_err(|_| corrupt("request id length"))?);
        let req = PendingRequest {
            id,
            pair_id: r.expect_u64(T_REQ_PAIR)?,
            shared_path: PathBuf::from(r.expect_str(T_REQ_SHARED)?),
            placed_at: r.expect_i64(T_REQ_PLACED)?,
            request_bytes: r.expect(T_REQ_BYTES)?.to_vec(),
        };
        r.finish()?;
        pending_requests.insert(id, req);
    }
    r.finish()?;
    Ok(Registry {
        user_id,
        kdkp,
        settings,
        pairs,
        pending_requests,
    })
}
