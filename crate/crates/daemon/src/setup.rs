//! First-run initialization and opening an existing installation.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use protbox::crypto::DEFAULT_KDF_ITERATIONS;
use protbox::identity::{
    certificate_pem, fingerprint, generate_rsa_key, IdentityToken, SoftwareCa, SoftwareToken, TokenConfig, TrustStore,
    ValidityWindow,
};
use protbox::{Engine, EngineConfig, SystemClock};
use serde::Serialize;

use crate::error::DaemonError;
use crate::home::{DaemonConfig, Home};

const CA_FILE: &str = "ca.pbst";
const ROOT_PEM: &str = "root.pem";
const TOKEN_CONF: &str = "token.conf";
const RSA_BITS: usize = 2048;

#[derive(Debug, Clone)]
pub enum IdentitySource {
    /// Issue a software token for `name` from the CA stored in `ca_dir`,
    /// creating that CA when the directory holds none.
    SoftwareToken { name: String, ca_dir: Option<PathBuf> },
    /// An existing token configuration and trust store.
    TokenConfig { config: PathBuf, truststore: PathBuf },
}

#[derive(Debug, Clone)]
pub struct InitOptions {
    pub identity: IdentitySource,
    /// Defaults to the token subject.
    pub user_id: Option<String>,
    pub listen: Option<SocketAddr>,
    pub kdf_iterations: u32,
}

impl InitOptions {
    pub fn software(name: impl Into<String>) -> Self {
        Self {
            identity: IdentitySource::SoftwareToken {
                name: name.into(),
                ca_dir: None,
            },
            user_id: None,
            listen: None,
            kdf_iterations: DEFAULT_KDF_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InitReport {
    pub user_id: String,
    pub subject: String,
    pub fingerprint: String,
    pub home: PathBuf,
    pub ca_dir: Option<PathBuf>,
    pub listen: SocketAddr,
}

fn load_or_create_ca(dir: &Path) -> Result<(SoftwareCa, bool), DaemonError> {
    let path = dir.join(CA_FILE);
    if path.exists() {
        return Ok((SoftwareCa::from_token(SoftwareToken::load(&path)?)?, false));
    }
    fs::create_dir_all(dir)?;
    let ca = SoftwareCa::root("ProtBox Software Root", RSA_BITS, &mut rand::rngs::OsRng)?;
    ca.to_token().save(&path)?;
    fs::write(dir.join(ROOT_PEM), certificate_pem(ca.certificate()))?;
    Ok((ca, true))
}

fn file_stem(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() { "token".into() } else { s }
}

/// Creates the registry, identity files and `config.json` under `home`.
pub fn init(home: &Home, options: &InitOptions, password: &str) -> Result<InitReport, DaemonError> {
    if home.config_path().exists() {
        return Err(DaemonError::Engine(protbox::EngineError::AlreadyInitialized(home.config_path())));
    }
    fs::create_dir_all(home.root())?;
    let (token_config, truststore, ca_dir) = match &options.identity {
        IdentitySource::SoftwareToken { name, ca_dir } => {
            let ca_dir = ca_dir.clone().unwrap_or_else(|| home.ca_dir());
            let (ca, _) = load_or_create_ca(&ca_dir)?;
            let key = generate_rsa_key(RSA_BITS, &mut rand::rngs::OsRng)?;
            let token = ca.issue_token_for(key, name, ValidityWindow::standard(), &mut rand::rngs::OsRng)?;
            let id_dir = home.identity_dir();
            fs::create_dir_all(&id_dir)?;
            let token_file = format!("{}.pbst", file_stem(name));
            token.save(&id_dir.join(&token_file))?;
            let conf = id_dir.join(TOKEN_CONF);
            fs::write(&conf, format!("provider={token_file}\nalias={name}\n"))?;
            let trust = home.truststore_dir();
            fs::create_dir_all(&trust)?;
            fs::write(trust.join(ROOT_PEM), certificate_pem(ca.certificate()))?;
            (conf, trust, Some(ca_dir))
        }
        IdentitySource::TokenConfig { config, truststore } => {
            (fs::canonicalize(config)?, fs::canonicalize(truststore)?, None)
        }
    };
    let (token, _) = load_identity(std::slice::from_ref(&token_config), &truststore)?;
    let leaf = token.chain()?.first().cloned().ok_or_else(|| DaemonError::Config("token has no certificate".into()))?;
    let subject = token.subject();
    let user_id = options.user_id.clone().unwrap_or_else(|| subject.clone());

    let mut config = DaemonConfig::new(&user_id, truststore, vec![token_config]);
    if let Some(listen) = options.listen {
        config.listen = listen;
    }
    config.validate()?;
    let (token, trust) = load_identity(&config.token_configs, &config.truststore_path)?;
    let mut engine_config = EngineConfig::new(home.root(), &user_id);
    engine_config.kdf_iterations = options.kdf_iterations;
    Engine::init(engine_config, password, token, trust, Arc::new(SystemClock))?;
    config.save(home)?;
    crate::home::load_or_create_api_token(home)?;
    Ok(InitReport {
        user_id,
        subject,
        fingerprint: fingerprint(&leaf),
        home: home.root().to_path_buf(),
        ca_dir,
        listen: config.listen,
    })
}

/// Opens the first usable token among `configs` and loads the trust store.
pub fn load_identity(configs: &[PathBuf], truststore: &Path) -> Result<(Arc<SoftwareToken>, Arc<TrustStore>), DaemonError> {
    let trust = TrustStore::load_dir(truststore)?;
    let mut last = None;
    for path in configs {
        let base = path.parent().unwrap_or(Path::new("."));
        match TokenConfig::load(path).and_then(|c| c.open(base)) {
            Ok(token) => return Ok((Arc::new(token), Arc::new(trust))),
            Err(e) => {
                log::warn!("token config {}: {e}", path.display());
                last = Some(e);
            }
        }
    }
    Err(last.map(DaemonError::from).unwrap_or_else(|| DaemonError::Config("no token configuration listed".into())))
}

pub fn open_engine(home: &Home, config: &DaemonConfig, password: &str) -> Result<Engine, DaemonError> {
    let (token, trust) = load_identity(&config.token_configs, &config.truststore_path)?;
    let engine_config = EngineConfig::new(home.root(), &config.user_id);
    let mut engine = Engine::open(engine_config, password, token, trust, Arc::new(SystemClock))?;
    let orphan_secs = (config.orphan_timeout_hours as i64).saturating_mul(3600);
    engine.update_settings(|s| {
        s.scan_period_secs = config.scan_period_secs;
        s.orphan_timeout_secs = orphan_secs;
    })?;
    Ok(engine)
}
