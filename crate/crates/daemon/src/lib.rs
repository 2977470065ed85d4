//! Control daemon for protbox folder pairs: a loopback HTTP API with an
//! event stream, per-pair sync workers, and the `protbox` command line.

pub mod api;
pub mod client;
pub mod dto;
pub mod error;
pub mod home;
pub mod server;
pub mod service;
pub mod setup;

pub use client::RemoteClient;
pub use error::{ApiError, DaemonError};
pub use home::{DaemonConfig, Home};
pub use server::Daemon;
pub use service::{Control, Service};

/// Where command-line operations go: the running daemon when there is one,
/// otherwise an engine opened in-process under the registry lock.
pub enum Connection {
    Remote(RemoteClient),
    Local { service: Box<Service>, _lock: home::RunLock },
}

impl Connection {
    /// `password` is only called when no daemon answers.
    pub fn open(home: &Home, password: impl FnOnce() -> Result<String, DaemonError>) -> Result<Self, DaemonError> {
        if let Some(client) = RemoteClient::discover(home) {
            return Ok(Self::Remote(client));
        }
        let config = DaemonConfig::load(home)?;
        let lock = home::RunLock::acquire(home)?;
        let engine = setup::open_engine(home, &config, &password()?)?;
        Ok(Self::Local {
            service: Box::new(Service::new(engine)),
            _lock: lock,
        })
    }

    pub fn control(&self) -> &dyn Control {
        match self {
            Self::Remote(c) => c,
            Self::Local { service, .. } => service.as_ref(),
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, Self::Remote(_))
    }
}
