//! On-disk layout: `<root>/registry.pbx` (sealed) and
//! `<root>/backups/<pair_id>/<entry_id>/<version_id>` (raw cleartext).

use std::fs;
use std::path::{Path, PathBuf};

use rand::{CryptoRng, RngCore};

use super::{decode_registry, encode_registry, Registry, RegistryError};
use crate::crypto::{self, RegistryKey, SealMode};
use crate::fsutil;
use crate::keydist::Kdkp;

pub const REGISTRY_FILE: &str = "registry.pbx";

#[derive(Debug, Clone)]
pub struct RegistryStore {
    root: PathBuf,
}

impl RegistryStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `<home>/.protbox/<user>`.
    pub fn default_root(home: &Path, user_id: &str) -> PathBuf {
        home.join(".protbox").join(user_id)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn registry_path(&self) -> PathBuf {
        self.root.join(REGISTRY_FILE)
    }

    pub fn exists(&self) -> bool {
        self.registry_path().is_file()
    }

    pub fn backups(&self) -> BackupStore {
        BackupStore::new(self.root.join("backups"))
    }

    /// Creates a fresh registry with a new KDKP and writes it.
    pub fn create<R: RngCore + CryptoRng>(
        &self,
        user_id: &str,
        password: &str,
        iterations: u32,
        mode: SealMode,
        kdkp: Option<Kdkp>,
        rng: &mut R,
    ) -> Result<(Registry, RegistryKey), RegistryError> {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let key = crypto::derive_registry_key(password, salt, iterations)?;
        let kdkp = kdkp.unwrap_or_else(|| Kdkp::generate(rng));
        let reg = Registry::new(user_id, kdkp);
        fs::create_dir_all(&self.root)?;
        self.save(&reg, &key, mode, rng)?;
        Ok((reg, key))
    }

    pub fn load(&self, password: &str) -> Result<(Registry, RegistryKey, SealMode), RegistryError> {
        let sealed = fs::read(self.registry_path())?;
        let (body, key, mode) = crypto::open_registry(password, &sealed)?;
        Ok((decode_registry(&body)?, key, mode))
    }

    pub fn save<R: RngCore + CryptoRng>(
        &self,
        reg: &Registry,
        key: &RegistryKey,
        mode: SealMode,
        rng: &mut R,
    ) -> Result<(), RegistryError> {
        let sealed = crypto::seal_registry(key, mode, &encode_registry(reg), rng);
        fs::create_dir_all(&self.root)?;
        let path = self.registry_path();
        fsutil::write_atomic(&path, &sealed)?;
        fsutil::restrict_permissions(&path)?;
        Ok(())
    }

    /// Re-seals under a new password with a fresh salt.
    pub fn change_password<R: RngCore + CryptoRng>(
        &self,
        reg: &Registry,
        new_password: &str,
        iterations: u32,
        mode: SealMode,
        rng: &mut R,
    ) -> Result<RegistryKey, RegistryError> {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let key = crypto::derive_registry_key(new_password, salt, iterations)?;
        self.save(reg, &key, mode, rng)?;
        Ok(key)
    }
}

/// Content-addressed by `(pair, entry, version)`; files are written once.
#[derive(Debug, Clone)]
pub struct BackupStore {
    root: PathBuf,
}

impl BackupStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, pair: u64, entry: u64, version: u64, content: &[u8]) -> Result<String, RegistryError> {
        let rel = format!("{pair}/{entry}/{version}");
        let path = fsutil::join_rel(&self.root, &rel);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        fsutil::write_atomic(&path, content)?;
        Ok(rel)
    }

    pub fn read(&self, content_ref: &str) -> Result<Vec<u8>, RegistryError> {
        Ok(fs::read(fsutil::join_rel(&self.root, content_ref))?)
    }

    pub fn remove(&self, content_ref: &str) {
        let _ = fs::remove_file(fsutil::join_rel(&self.root, content_ref));
    }

    fn pending_path(&self, id: u64) -> PathBuf {
        self.root.join("pending").join(id.to_string())
    }

    pub fn write_pending(&self, id: u64, content: &[u8]) -> Result<(), RegistryError> {
        let path = self.pending_path(id);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        fsutil::write_atomic(&path, content)?;
        Ok(())
    }

    pub fn read_pending(&self, id: u64) -> Result<Vec<u8>, RegistryError> {
        Ok(fs::read(self.pending_path(id))?)
    }

    pub fn remove_pending(&self, id: u64) {
        let _ = fs::remove_file(self.pending_path(id));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{AlgorithmSpec, MIN_KDF_ITERATIONS};
    use crate::registry::tests::test_kdkp;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn create_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = RegistryStore::new(RegistryStore::default_root(dir.path(), "alice"));
        let mut rng = StdRng::seed_from_u64(1);
        let (mut reg, key) = store
            .create("alice", "pw", MIN_KDF_ITERATIONS, SealMode::Ecb, Some(test_kdkp()), &mut rng)
            .unwrap();
        assert!(reg.pairs.is_empty());
        let prot = dir.path().join("p");
        let shared = dir.path().join("s");
        fs::create_dir_all(&prot).unwrap();
        fs::create_dir_all(&shared).unwrap();
        reg.add_pair(&prot, &shared, AlgorithmSpec::default(), &mut rng).unwrap();
        store.save(&reg, &key, SealMode::Ecb, &mut rng).unwrap();

        let (loaded, _, mode) = store.load("pw").unwrap();
        assert_eq!(loaded, reg);
        assert_eq!(mode, SealMode::Ecb);
        assert_eq!(store.load("nope").unwrap_err(), RegistryError::WrongPassword);

        store.change_password(&reg, "pw2", MIN_KDF_ITERATIONS, SealMode::Cbc, &mut rng).unwrap();
        assert_eq!(store.load("pw").unwrap_err(), RegistryError::WrongPassword);
        assert_eq!(store.load("pw2").unwrap().0, reg);
        let leftovers: Vec<_> = fs::read_dir(store.root()).unwrap().flatten().map(|e| e.file_name()).collect();
        assert_eq!(leftovers, [REGISTRY_FILE]);
    }

    #[test]
    fn backup_content_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let b = BackupStore::new(dir.path());
        let r = b.write(1, 2, 3, b"bytes").unwrap();
        assert_eq!(r, "1/2/3");
        assert_eq!(b.read(&r).unwrap(), b"bytes");
        assert_eq!(b.read(&r).unwrap(), b"bytes");
    }
}
