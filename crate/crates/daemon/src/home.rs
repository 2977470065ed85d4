//! Files under the protbox home directory.
//!
//! ```text
//! <home>/registry.pbx      sealed registry
//! <home>/backups/          backup versions
//! <home>/events.jsonl      event log
//! <home>/config.json       DaemonConfig
//! <home>/api-token         bearer secret, mode 0600
//! <home>/daemon.json       address of the running daemon
//! <home>/daemon.lock       held by whichever process writes the registry
//! <home>/identity/         software token and its token config
//! <home>/truststore/       trusted root certificates
//! <home>/ca/               software CA, when `init` created one
//! ```

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, Read};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::DaemonError;

pub const HOME_ENV: &str = "PROTBOX_HOME";
pub const PASSWORD_FILE_ENV: &str = "PROTBOX_PASSWORD_FILE";
pub const DEFAULT_PORT: u16 = 7787;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Home {
    root: PathBuf,
}

impl Home {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$PROTBOX_HOME`, else `~/.protbox`.
    pub fn from_env() -> Self {
        if let Some(dir) = std::env::var_os(HOME_ENV) {
            return Self::new(dir);
        }
        let base = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        Self::new(base.join(".protbox"))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn token_path(&self) -> PathBuf {
        self.root.join("api-token")
    }

    pub fn runtime_path(&self) -> PathBuf {
        self.root.join("daemon.json")
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join("daemon.lock")
    }

    pub fn identity_dir(&self) -> PathBuf {
        self.root.join("identity")
    }

    pub fn truststore_dir(&self) -> PathBuf {
        self.root.join("truststore")
    }

    pub fn ca_dir(&self) -> PathBuf {
        self.root.join("ca")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaemonConfig {
    pub user_id: String,
    /// Must be a loopback address. Port 0 picks a free port at start.
    pub listen: SocketAddr,
    pub scan_period_secs: u64,
    pub orphan_timeout_hours: u64,
    pub truststore_path: PathBuf,
    pub token_configs: Vec<PathBuf>,
}

impl DaemonConfig {
    pub fn new(user_id: impl Into<String>, truststore_path: PathBuf, token_configs: Vec<PathBuf>) -> Self {
        Self {
            user_id: user_id.into(),
            listen: SocketAddr::from((Ipv4Addr::LOCALHOST, DEFAULT_PORT)),
            scan_period_secs: 5,
            orphan_timeout_hours: 48,
            truststore_path,
            token_configs,
        }
    }

    pub fn validate(&self) -> Result<(), DaemonError> {
        if !self.listen.ip().is_loopback() {
            return Err(DaemonError::Config(format!("{} is not a loopback address", self.listen)));
        }
        if self.scan_period_secs == 0 {
            return Err(DaemonError::Config("scan_period_secs must be at least 1".into()));
        }
        if self.token_configs.is_empty() {
            return Err(DaemonError::Config("no token configuration listed".into()));
        }
        Ok(())
    }

    pub fn load(home: &Home) -> Result<Self, DaemonError> {
        let path = home.config_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(DaemonError::NotInitialized(path)),
            Err(e) => return Err(e.into()),
        };
        let config: Self = serde_json::from_str(&text).map_err(|e| DaemonError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, home: &Home) -> Result<(), DaemonError> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        protbox::fsutil::write_atomic(&home.config_path(), text.as_bytes())?;
        Ok(())
    }
}

/// Written by a serving daemon so the command line can find it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub pid: u32,
    pub listen: SocketAddr,
    pub started_at: String,
}

impl RuntimeInfo {
    pub fn load(home: &Home) -> Option<Self> {
        let text = fs::read_to_string(home.runtime_path()).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, home: &Home) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("runtime info serializes");
        protbox::fsutil::write_atomic(&home.runtime_path(), text.as_bytes())
    }
}

/// Exclusive lock on `daemon.lock`; released on drop.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

impl RunLock {
    pub fn acquire(home: &Home) -> Result<Self, DaemonError> {
        fs::create_dir_all(home.root())?;
        let path = home.lock_path();
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path)?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(TryLockError::WouldBlock) => Err(DaemonError::Locked(path)),
            Err(TryLockError::Error(e)) => Err(e.into()),
        }
    }
}

/// Reads the API token, creating a fresh 256-bit one when missing.
pub fn load_or_create_api_token(home: &Home) -> io::Result<String> {
    let path = home.token_path();
    match fs::read_to_string(&path) {
        Ok(t) if !t.trim().is_empty() => return Ok(t.trim().to_owned()),
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(e),
    }
    let mut secret = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut secret);
    let token = hex::encode(secret);
    let mut options = OpenOptions::new();
    options.create(true).truncate(true).write(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut options, 0o600);
    io::Write::write_all(&mut options.open(&path)?, token.as_bytes())?;
    protbox::fsutil::restrict_permissions(&path)?;
    Ok(token)
}

pub fn read_api_token(home: &Home) -> io::Result<String> {
    Ok(fs::read_to_string(home.token_path())?.trim().to_owned())
}

/// The registry password, from the file named by `PROTBOX_PASSWORD_FILE` or
/// an interactive prompt.
pub fn registry_password(confirm: bool) -> Result<String, DaemonError> {
    if let Some(path) = std::env::var_os(PASSWORD_FILE_ENV) {
        let mut text = String::new();
        File::open(&path)?.read_to_string(&mut text)?;
        return Ok(text.trim_end_matches(['\r', '\n']).to_owned());
    }
    let first = rpassword::prompt_password("Registry password: ")?;
    if confirm {
        let second = rpassword::prompt_password("Repeat password: ")?;
        if first != second {
            return Err(DaemonError::BadRequest("passwords do not match".into()));
        }
    }
    if first.is_empty() {
        return Err(DaemonError::BadRequest("empty password".into()));
    }
    Ok(first)
}
