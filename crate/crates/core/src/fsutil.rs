//! Filesystem helpers shared by the registry and the sync engine.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Prefix of temporary files written next to their final destination.
pub const TEMP_PREFIX: &str = ".~pbtmp.";

/// What a scan remembers about a file to notice later changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileStamp {
    /// Modification time in nanoseconds since the epoch.
    pub mtime: i64,
    pub len: u64,
}

impl FileStamp {
    pub fn of_metadata(meta: &fs::Metadata) -> Self {
        let mtime = meta
            .modified()
            .ok()
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map(|d| d.as_nanos() as i64)
            .unwrap_or(0);
        Self { mtime, len: meta.len() }
    }

    pub fn of_path(path: &Path) -> io::Result<Self> {
        fs::metadata(path).map(|m| Self::of_metadata(&m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    File,
    Dir,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    /// `/`-separated path relative to the walked root.
    pub rel: String,
    pub kind: NodeKind,
    pub stamp: FileStamp,
}

/// Recursively lists `root`, skipping symlinks and any entry whose name
/// `skip` rejects. Children of skipped directories are not visited.
pub fn walk(root: &Path, skip: &dyn Fn(&str) -> bool) -> io::Result<Vec<Node>> {
    let mut out = Vec::new();
    walk_into(root, "", skip, &mut out)?;
    Ok(out)
}

fn walk_into(dir: &Path, prefix: &str, skip: &dyn Fn(&str) -> bool, out: &mut Vec<Node>) -> io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
            log::warn!("skipping non UTF-8 name in {}", dir.display());
            continue;
        };
        if name.starts_with(TEMP_PREFIX) || skip(&name) {
            continue;
        }
        let meta = match fs::symlink_metadata(entry.path()) {
            Ok(m) => m,
            Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
            Err(e) => return Err(e),
        };
        let rel = if prefix.is_empty() { name } else { format!("{prefix}/{name}") };
        if meta.file_type().is_symlink() {
            log::warn!("skipping symlink {}", entry.path().display());
        } else if meta.is_dir() {
            out.push(Node {
                rel: rel.clone(),
                kind: NodeKind::Dir,
                stamp: FileStamp::of_metadata(&meta),
            });
            walk_into(&entry.path(), &rel, skip, out)?;
        } else if meta.is_file() {
            out.push(Node {
                rel,
                kind: NodeKind::File,
                stamp: FileStamp::of_metadata(&meta),
            });
        }
    }
    Ok(())
}

pub fn join_rel(root: &Path, rel: &str) -> PathBuf {
    rel.split('/').fold(root.to_path_buf(), |p, s| p.join(s))
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!("{TEMP_PREFIX}{}.{name}", rand::random::<u32>()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Like [`write_atomic`], then sets the modification time.
pub fn write_atomic_with_mtime(path: &Path, bytes: &[u8], mtime: Option<SystemTime>) -> io::Result<()> {
    write_atomic(path, bytes)?;
    if let Some(t) = mtime {
        fs::File::options().write(true).open(path)?.set_modified(t)?;
    }
    Ok(())
}

#[cfg(unix)]
pub fn restrict_permissions(path: &Path) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o600))
}

#[cfg(not(unix))]
pub fn restrict_permissions(_path: &Path) -> io::Result<()> {
    Ok(())
}

/// True when the directory is marked read-only or a write probe is refused.
pub fn is_read_only_dir(dir: &Path) -> bool {
    match fs::metadata(dir) {
        Ok(m) if m.permissions().readonly() => true,
        Ok(_) => false,
        Err(e) => is_read_only_error(&e),
    }
}

pub fn is_read_only_error(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::PermissionDenied | io::ErrorKind::ReadOnlyFilesystem
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walk_lists_files_and_dirs_in_order() {
        let d = tempfile::tempdir().unwrap();
        fs::create_dir_all(d.path().join("a/b")).unwrap();
        fs::write(d.path().join("a/b/c.txt"), "x").unwrap();
        fs::write(d.path().join("z.txt"), "yy").unwrap();
        fs::write(d.path().join("_skip"), "").unwrap();
        fs::write(d.path().join(format!("{TEMP_PREFIX}1.z")), "").unwrap();
        let nodes = walk(d.path(), &|n| n.starts_with('_')).unwrap();
        let rels: Vec<_> = nodes.iter().map(|n| n.rel.as_str()).collect();
        assert_eq!(rels, ["a", "a/b", "a/b/c.txt", "z.txt"]);
        assert_eq!(nodes[3].stamp.len, 2);
    }

    #[cfg(unix)]
    #[test]
    fn symlinks_are_skipped() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("real"), "x").unwrap();
        std::os::unix::fs::symlink(d.path().join("real"), d.path().join("link")).unwrap();
        let nodes = walk(d.path(), &|_| false).unwrap();
        assert_eq!(nodes.len(), 1);
    }

    #[test]
    fn atomic_write_replaces() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("f");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
    }
}
