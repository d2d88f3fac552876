#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use crowdnav::config::{GatewaySettings, HostEndpoint, HostSettings, Pacing};
use crowdnav::gateway::{self, GatewayState};
use crowdnav::host::{self, HostState};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub fn host_settings(id: &str, data: &Path, pacing: Pacing) -> HostSettings {
    HostSettings {
        host_id: id.into(),
        bind: "127.0.0.1:0".into(),
        data_dir: data.to_path_buf(),
        pacing,
        ..HostSettings::default()
    }
}

pub struct InProcHost {
    pub addr: SocketAddr,
    pub state: Arc<HostState>,
    stop: Option<oneshot::Sender<()>>,
    join: JoinHandle<anyhow::Result<()>>,
}

impl InProcHost {
    pub async fn start(settings: HostSettings) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let state = host::prepare(settings).unwrap();
        let (tx, rx) = oneshot::channel();
        let join = tokio::spawn(host::serve(state.clone(), listener, async {
            let _ = rx.await;
        }));
        Self {
            addr,
            state,
            stop: Some(tx),
            join,
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = tokio::time::timeout(Duration::from_secs(10), self.join).await;
    }
}

pub struct InProcGateway {
    pub addr: SocketAddr,
    pub state: Arc<GatewayState>,
    stop: Option<oneshot::Sender<()>>,
    join: JoinHandle<anyhow::Result<()>>,
}

impl InProcGateway {
    pub async fn start(hosts: &[(String, String)], health_period_ms: u64) -> Self {
        let settings = GatewaySettings {
            bind: "127.0.0.1:0".into(),
            hosts: hosts
                .iter()
                .map(|(id, url)| HostEndpoint {
                    id: id.clone(),
                    url: url.clone(),
                })
                .collect(),
            health_period_ms,
            probe_timeout_ms: health_period_ms.min(1000),
            ..GatewaySettings::default()
        };
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let state = GatewayState::new(settings).unwrap();
        let (tx, rx) = oneshot::channel();
        let join = tokio::spawn(gateway::serve(state.clone(), listener, async {
            let _ = rx.await;
        }));
        Self {
            addr,
            state,
            stop: Some(tx),
            join,
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = tokio::time::timeout(Duration::from_secs(10), self.join).await;
    }
}

/// A `crowdnav serve host` child process on an ephemeral port.
pub struct HostProc {
    pub child: Child,
    pub addr: String,
}

impl HostProc {
    pub fn spawn(id: &str, data: &Path, extra: &[&str]) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_crowdnav"))
            .args(["serve", "host", "--host-id", id, "--bind", "127.0.0.1:0", "--data-dir"])
            .arg(data)
            .args(extra)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn host");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening ")
            .unwrap_or_else(|| panic!("unexpected host banner {line:?}"))
            .to_owned();
        Self { child, addr }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// SIGKILL, no chance to clean up.
    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    pub fn terminate(&mut self) {
        #[cfg(unix)]
        unsafe {
            libc::kill(self.child.id() as i32, libc::SIGTERM);
        }
        let _ = self.child.wait();
    }
}

impl Drop for HostProc {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.kill();
        }
    }
}

/// Polls `f` every 20 ms until it yields a value or `limit` passes.
pub async fn wait_for<T, F, Fut>(limit: Duration, mut f: F) -> Option<T>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Option<T>>,
{
    let end = tokio::time::Instant::now() + limit;
    loop {
        if let Some(v) = f().await {
            return Some(v);
        }
        if tokio::time::Instant::now() >= end {
            return None;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}
