#![allow(dead_code)]

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;

use protbox::crypto::MIN_KDF_ITERATIONS;
use protbox_daemon::home::{read_api_token, RuntimeInfo};
use protbox_daemon::setup::{self, IdentitySource, InitOptions};
use protbox_daemon::{DaemonError, Home, RemoteClient};
use tokio::sync::oneshot;

pub const PASSWORD: &str = "correct horse battery staple";

pub fn loopback_any() -> SocketAddr {
    SocketAddr::from((Ipv4Addr::LOCALHOST, 0))
}

/// Initializes a home with a software token. `ca` shares a CA directory
/// between homes so that their requests are trusted by each other.
pub fn init_home(root: &Path, name: &str, ca: Option<PathBuf>) -> Home {
    let home = Home::new(root);
    let options = InitOptions {
        identity: IdentitySource::SoftwareToken {
            name: name.into(),
            ca_dir: ca,
        },
        user_id: None,
        listen: Some(loopback_any()),
        kdf_iterations: MIN_KDF_ITERATIONS,
    };
    setup::init(&home, &options, PASSWORD).expect("init");
    home
}

#[derive(Debug)]
pub struct Running {
    pub addr: SocketAddr,
    pub token: String,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<(), DaemonError>>>,
}

impl Running {
    pub fn client(&self) -> RemoteClient {
        RemoteClient::new(self.addr, self.token.clone())
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}/v1{path}", self.addr)
    }

    pub fn stop(mut self) -> Result<(), DaemonError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), DaemonError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().expect("daemon thread panicked"),
            None => Ok(()),
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Runs a daemon for `home` on its own runtime thread.
pub fn start(home: &Home, password: &str) -> Result<Running, DaemonError> {
    let (ready_tx, ready_rx) = mpsc::channel();
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let token_home = home.clone();
    let home = home.clone();
    let password = password.to_owned();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        rt.block_on(async move {
            match protbox_daemon::Daemon::bind(home, &password).await {
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    Ok(())
                }
                Ok(daemon) => {
                    let _ = ready_tx.send(Ok(daemon.local_addr()));
                    daemon
                        .run(async {
                            let _ = stop_rx.await;
                        })
                        .await
                }
            }
        })
    });
    match ready_rx.recv().expect("daemon thread reports readiness") {
        Ok(addr) => {
            let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
            while RuntimeInfo::load(&token_home).map(|i| i.listen) != Some(addr) {
                assert!(std::time::Instant::now() < deadline, "daemon.json never appeared");
                std::thread::sleep(std::time::Duration::from_millis(10));
            }
            Ok(Running {
            addr,
            token: read_api_token(&token_home).expect("api token"),
            stop: Some(stop_tx),
            thread: Some(thread),
            })
        }
        Err(e) => {
            let _ = thread.join();
            Err(e)
        }
    }
}
