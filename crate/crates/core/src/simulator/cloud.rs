use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, UNIX_EPOCH};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fsutil::{join_rel, walk, write_atomic, NodeKind};

/// First fake modification time (seconds) handed out to written files.
pub const FAKE_MTIME_START: u64 = 2_000_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no such file {0}")]
    NoSuchFile(String),
    #[error("unknown replica {0}")]
    UnknownReplica(usize),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub replicas: usize,
    /// Delivery delay in steps; 1 means the op lands during the step that
    /// observed it.
    pub min_delay: u64,
    pub max_delay: u64,
    /// Probability that one delivery (one op to one replica) is lost.
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replicas: 3,
            min_delay: 1,
            max_delay: 1,
            drop_rate: 0.0,
            seed: 0,
        }
    }
}

/// Last-writer-wins order: logical time, then replica index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version {
    pub time: u64,
    pub origin: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Write(Vec<u8>),
    MakeDir,
    Delete,
}

impl OpKind {
    fn label(&self) -> &'static str {
        match self {
            OpKind::Write(_) => "write",
            OpKind::MakeDir => "mkdir",
            OpKind::Delete => "delete",
        }
    }
}

#[derive(Debug, Clone)]
struct PendingOp {
    due: u64,
    seq: u64,
    target: usize,
    path: String,
    op: OpKind,
    version: Version,
}

/// One delivery, as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    pub replica: usize,
    pub path: String,
    pub op: String,
    pub version: Version,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Seen {
    File([u8; 32]),
    Dir,
}

#[derive(Debug, Default)]
struct Replica {
    root: PathBuf,
    /// What the stepper last saw or wrote, to tell local edits apart.
    snapshot: BTreeMap<String, Seen>,
    /// Version of the current content of each path; `true` marks a tombstone.
    versions: BTreeMap<String, (Version, bool)>,
    read_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    FlipBit { offset: usize, bit: u8 },
    SetByte { offset: usize, value: u8 },
    Truncate { len: usize },
    Delete,
}

/// A deterministic stand-in for a cloud provider keeping N local folders in
/// sync, one per engine instance.
#[derive(Debug)]
pub struct SimCloud {
    config: SimConfig,
    replicas: Vec<Replica>,
    pending: Vec<PendingOp>,
    now: u64,
    seq: u64,
    rng: StdRng,
    trace: Vec<TraceEntry>,
    next_mtime: u64,
}

fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

impl SimCloud {
    /// Creates `config.replicas` empty folders under `root`.
    pub fn new(root: &Path, config: SimConfig) -> io::Result<Self> {
        let mut replicas = Vec::new();
        for i in 0..config.replicas {
            let dir = root.join(format!("replica-{i}"));
            fs::create_dir_all(&dir)?;
            replicas.push(Replica {
                root: fs::canonicalize(&dir)?,
                ..Replica::default()
            });
        }
        Ok(Self {
            rng: StdRng::seed_from_u64(config.seed),
            config,
            replicas,
            pending: Vec::new(),
            now: 0,
            seq: 0,
            trace: Vec::new(),
            next_mtime: FAKE_MTIME_START,
        })
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }

    pub fn replica_root(&self, i: usize) -> &Path {
        &self.replicas[i].root
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn pending_ops(&self) -> usize {
        self.pending.len()
    }

    /// A modification time no earlier write received, so stamp-based change
    /// detection never misses an edit.
    pub fn next_mtime(&mut self) -> std::time::SystemTime {
        self.next_mtime += 1;
        UNIX_EPOCH + Duration::from_secs(self.next_mtime)
    }

    /// Writes `content` to `path` and stamps it with a fresh fake mtime.
    pub fn write_file(&mut self, path: &Path, content: &[u8]) -> io::Result<()> {
        if let Some(d) = path.parent() {
            fs::create_dir_all(d)?;
        }
        let t = self.next_mtime();
        write_atomic(path, content)?;
        fs::File::options().write(true).open(path)?.set_modified(t)
    }

    /// Marks a replica read-only for its local user. The provider keeps
    /// delivering into it.
    pub fn set_read_only(&mut self, replica: usize, read_only: bool) -> Result<(), SimError> {
        let r = self.replicas.get_mut(replica).ok_or(SimError::UnknownReplica(replica))?;
        r.read_only = read_only;
        set_mode(&r.root, read_only)?;
        Ok(())
    }

    /// Corrupts or removes a file on one replica. The result travels to the
    /// other replicas like any other write.
    pub fn tamper(&mut self, replica: usize, rel: &str, mutation: Mutation) -> Result<(), SimError> {
        let root = self.replicas.get(replica).ok_or(SimError::UnknownReplica(replica))?.root.clone();
        let path = join_rel(&root, rel);
        let mut bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(SimError::NoSuchFile(rel.to_owned())),
            Err(e) => return Err(e.into()),
        };
        match mutation {
            Mutation::Delete => {
                fs::remove_file(&path)?;
                return Ok(());
            }
            Mutation::FlipBit { offset, bit } => {
                if bytes.is_empty() {
                    bytes.push(0);
                }
                let i = offset % bytes.len();
                bytes[i] ^= 1 << (bit % 8);
            }
            Mutation::SetByte { offset, value } => {
                if bytes.is_empty() {
                    bytes.push(0);
                }
                let i = offset % bytes.len();
                bytes[i] = value;
            }
            Mutation::Truncate { len } => bytes.truncate(len),
        }
        self.write_file(&path, &bytes)?;
        Ok(())
    }

    /// Advances logical time by one: picks up local edits on every replica,
    /// then delivers due operations. Returns how many deliveries changed a
    /// replica.
    pub fn step(&mut self) -> io::Result<usize> {
        self.now += 1;
        for i in 0..self.replicas.len() {
            self.collect(i)?;
        }
        let now = self.now;
        let mut due: Vec<PendingOp> = Vec::new();
        self.pending.retain(|op| {
            if op.due <= now {
                due.push(op.clone());
                false
            } else {
                true
            }
        });
        due.sort_by_key(|op| (op.due, op.seq));
        let mut applied = 0;
        for op in due {
            let changed = self.deliver(&op)?;
            self.trace.push(TraceEntry {
                step: now,
                replica: op.target,
                path: op.path.clone(),
                op: op.op.label().to_owned(),
                version: op.version,
                applied: changed,
            });
            applied += changed as usize;
        }
        Ok(applied)
    }

    /// Steps until nothing is in flight and no replica has unseen edits.
    /// Returns the number of steps taken.
    pub fn flush(&mut self) -> io::Result<u64> {
        let mut steps = 0;
        loop {
            self.step()?;
            steps += 1;
            if self.pending.is_empty() && !self.has_local_edits()? {
                return Ok(steps);
            }
        }
    }

    fn has_local_edits(&self) -> io::Result<bool> {
        for r in &self.replicas {
            if scan_tree(&r.root)? != r.snapshot {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn collect(&mut self, i: usize) -> io::Result<()> {
        let current = scan_tree(&self.replicas[i].root)?;
        let old = std::mem::take(&mut self.replicas[i].snapshot);
        let mut ops: Vec<(String, OpKind)> = Vec::new();
        for (path, seen) in &current {
            if old.get(path) == Some(seen) {
                continue;
            }
            let op = match seen {
                Seen::Dir => OpKind::MakeDir,
                Seen::File(_) => OpKind::Write(fs::read(join_rel(&self.replicas[i].root, path))?),
            };
            ops.push((path.clone(), op));
        }
        // Members before their folders.
        for path in old.keys().rev() {
            if !current.contains_key(path) {
                ops.push((path.clone(), OpKind::Delete));
            }
        }
        self.replicas[i].snapshot = current;
        for (path, op) in ops {
            self.seq += 1;
            let version = Version { time: self.now, origin: i };
            let tomb = op == OpKind::Delete;
            self.replicas[i].versions.insert(path.clone(), (version, tomb));
            for target in 0..self.replicas.len() {
                if target == i {
                    continue;
                }
                if self.config.drop_rate > 0.0 && self.rng.gen_bool(self.config.drop_rate.min(1.0)) {
                    continue;
                }
                let delay = self.rng.gen_range(self.config.min_delay.max(1)..=self.config.max_delay.max(self.config.min_delay).max(1));
                self.seq += 1;
                self.pending.push(PendingOp {
                    due: self.now + delay - 1,
                    seq: self.seq,
                    target,
                    path: path.clone(),
                    op: op.clone(),
                    version,
                });
            }
        }
        Ok(())
    }

    fn deliver(&mut self, op: &PendingOp) -> io::Result<bool> {
        let r = op.target;
        if self.replicas[r].versions.get(&op.path).is_some_and(|(v, _)| *v >= op.version) {
            return Ok(false);
        }
        let root = self.replicas[r].root.clone();
        let read_only = self.replicas[r].read_only;
        if read_only {
            set_mode(&root, false)?;
        }
        let path = join_rel(&root, &op.path);
        let result = (|| -> io::Result<()> {
            match &op.op {
                OpKind::Write(bytes) => {
                    if path.is_dir() {
                        fs::remove_dir_all(&path)?;
                    }
                    self.write_file(&path, bytes)?;
                }
                OpKind::MakeDir => {
                    if path.is_file() {
                        fs::remove_file(&path)?;
                    }
                    fs::create_dir_all(&path)?;
                }
                OpKind::Delete => {
                    if path.is_dir() {
                        // Members deleted elsewhere arrive as their own ops;
                        // anything left here is newer and keeps the folder.
                        let _ = fs::remove_dir(&path);
                    } else {
                        match fs::remove_file(&path) {
                            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
                            _ => {}
                        }
                    }
                    self.prune_deleted_parents(r, &op.path);
                }
            }
            Ok(())
        })();
        if read_only {
            set_mode(&root, true)?;
        }
        result?;
        self.replicas[r].versions.insert(op.path.clone(), (op.version, op.op == OpKind::Delete));
        // Whatever delivery touched, parents included, is not a local edit.
        let mut touched = op.path.as_str();
        loop {
            let seen = seen_at(&root, touched)?;
            let snap = &mut self.replicas[r].snapshot;
            match seen {
                Some(seen) => snap.insert(touched.to_owned(), seen),
                None => snap.remove(touched),
            };
            match touched.rfind('/') {
                Some(i) => touched = &touched[..i],
                None => break,
            }
        }
        Ok(true)
    }

    /// Removes now-empty folders whose own deletion arrived before their
    /// members' deletions.
    fn prune_deleted_parents(&self, r: usize, rel: &str) {
        let replica = &self.replicas[r];
        let mut cur = rel;
        while let Some(i) = cur.rfind('/') {
            cur = &cur[..i];
            if !replica.versions.get(cur).is_some_and(|(_, tomb)| *tomb) {
                break;
            }
            if fs::remove_dir(join_rel(&replica.root, cur)).is_err() {
                break;
            }
        }
    }

    /// True when nothing is in flight, no replica has unseen edits, all
    /// replicas hold identical trees and so do all `prot_roots`.
    pub fn converged(&self, prot_roots: &[PathBuf]) -> io::Result<bool> {
        if !self.pending.is_empty() || self.has_local_edits()? {
            return Ok(false);
        }
        let first = match self.replicas.first() {
            Some(r) => scan_tree(&r.root)?,
            None => return Ok(true),
        };
        for r in &self.replicas[1..] {
            if scan_tree(&r.root)? != first {
                return Ok(false);
            }
        }
        trees_identical(prot_roots)
    }
}

pub fn trees_identical(roots: &[PathBuf]) -> io::Result<bool> {
    let Some((head, rest)) = roots.split_first() else {
        return Ok(true);
    };
    let first = scan_tree(head)?;
    for r in rest {
        if scan_tree(r)? != first {
            return Ok(false);
        }
    }
    Ok(true)
}

fn scan_tree(root: &Path) -> io::Result<BTreeMap<String, Seen>> {
    let mut out = BTreeMap::new();
    for node in walk(root, &|_| false)? {
        let seen = match node.kind {
            NodeKind::Dir => Seen::Dir,
            NodeKind::File => Seen::File(digest(&fs::read(join_rel(root, &node.rel))?)),
        };
        out.insert(node.rel, seen);
    }
    Ok(out)
}

fn seen_at(root: &Path, rel: &str) -> io::Result<Option<Seen>> {
    let path = join_rel(root, rel);
    match fs::symlink_metadata(&path) {
        Ok(m) if m.is_dir() => Ok(Some(Seen::Dir)),
        Ok(m) if m.is_file() => Ok(Some(Seen::File(digest(&fs::read(&path)?)))),
        Ok(_) => Ok(None),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

/// Relative paths and contents of every file under `root`, directories as `None`.
pub fn tree_contents(root: &Path) -> io::Result<BTreeMap<String, Option<Vec<u8>>>> {
    let mut out = BTreeMap::new();
    for node in walk(root, &|_| false)? {
        let content = match node.kind {
            NodeKind::Dir => None,
            NodeKind::File => Some(fs::read(join_rel(root, &node.rel))?),
        };
        out.insert(node.rel, content);
    }
    Ok(out)
}

#[cfg(unix)]
fn set_mode(dir: &Path, read_only: bool) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(dir, fs::Permissions::from_mode(if read_only { 0o555 } else { 0o755 }))
}

#[cfg(not(unix))]
fn set_mode(dir: &Path, read_only: bool) -> io::Result<()> {
    let mut p = fs::metadata(dir)?.permissions();
    p.set_readonly(read_only);
    fs::set_permissions(dir, p)
}
