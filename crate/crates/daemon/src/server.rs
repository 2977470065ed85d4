//! The long-running daemon: one worker task per pair plus the API server.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use protbox::events::pair_ref;
use protbox::registry::PairId;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::api;
use crate::dto::iso8601;
use crate::error::DaemonError;
use crate::home::{load_or_create_api_token, DaemonConfig, Home, RunLock, RuntimeInfo};
use crate::service::Service;
use crate::setup::open_engine;

/// A daemon that has unsealed its registry and bound its port.
pub struct Daemon {
    home: Home,
    config: DaemonConfig,
    listener: TcpListener,
    service: Arc<Service>,
    token: String,
    _lock: RunLock,
}

impl std::fmt::Debug for Daemon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Daemon").field("home", &self.home).finish_non_exhaustive()
    }
}

impl Daemon {
    /// Loads the configuration, takes the registry lock, unseals the
    /// registry and binds the listen address. Nothing is written on failure.
    pub async fn bind(home: Home, password: &str) -> Result<Self, DaemonError> {
        let config = DaemonConfig::load(&home)?;
        let lock = RunLock::acquire(&home)?;
        let engine = open_engine(&home, &config, password)?;
        let listener = match TcpListener::bind(config.listen).await {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => return Err(DaemonError::PortBusy(config.listen)),
            Err(e) => return Err(e.into()),
        };
        let token = load_or_create_api_token(&home)?;
        Ok(Self {
            home,
            config,
            listener,
            service: Arc::new(Service::new(engine)),
            token,
            _lock: lock,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn service(&self) -> Arc<Service> {
        self.service.clone()
    }

    /// Serves until `shutdown` resolves.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), DaemonError> {
        let addr = self.local_addr();
        RuntimeInfo {
            pid: std::process::id(),
            listen: addr,
            started_at: iso8601(chrono::Utc::now().timestamp()),
        }
        .save(&self.home)?;
        log::info!("listening on http://{addr}");
        let period = Duration::from_secs(self.config.scan_period_secs);
        let supervisor = tokio::spawn(supervise(self.service.clone(), period));
        let app = api::router(self.service.clone(), &self.token);
        let served = axum::serve(self.listener, app.into_make_service_with_connect_info::<SocketAddr>())
            .with_graceful_shutdown(shutdown)
            .await;
        supervisor.abort();
        let _ = std::fs::remove_file(self.home.runtime_path());
        served.map_err(DaemonError::from)
    }
}

/// Keeps exactly one worker per registered pair.
async fn supervise(service: Arc<Service>, period: Duration) {
    let mut workers: HashMap<PairId, JoinHandle<()>> = HashMap::new();
    loop {
        let wake = service.wake.notified();
        let svc = service.clone();
        let ids = tokio::task::spawn_blocking(move || svc.pair_ids()).await.unwrap_or_default();
        workers.retain(|id, handle| {
            let keep = ids.contains(id) && !handle.is_finished();
            if !keep {
                handle.abort();
            }
            keep
        });
        for id in ids {
            workers
                .entry(id)
                .or_insert_with(|| tokio::spawn(worker(service.clone(), id, period)));
        }
        tokio::select! {
            _ = wake => {}
            _ = tokio::time::sleep(period) => {}
        }
    }
}

async fn worker(service: Arc<Service>, id: PairId, period: Duration) {
    log::info!("worker for pair {} started", pair_ref(id));
    loop {
        let wake = service.wake.notified();
        let svc = service.clone();
        match tokio::task::spawn_blocking(move || svc.cycle(id)).await {
            Ok(None) | Err(_) => break,
            Ok(Some(Err(e))) => log::warn!("pair {}: {e}", pair_ref(id)),
            Ok(Some(Ok(report))) if !report.is_empty() => {
                log::info!(
                    "pair {}: {} copied, {} deleted, {} conflicts, {} quarantined",
                    pair_ref(id),
                    report.sync.copied,
                    report.sync.deleted,
                    report.sync.conflicts,
                    report.sync.quarantined
                );
            }
            Ok(Some(Ok(_))) => {}
        }
        tokio::select! {
            _ = wake => {}
            _ = tokio::time::sleep(period) => {}
        }
    }
    log::info!("worker for pair {} stopped", pair_ref(id));
}
