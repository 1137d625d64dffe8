//! HTTP backend of NeedleDB: the `/v1` API over the core stores.

pub mod backend;
pub mod routes;
pub mod wire;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use anyhow::Context;
use tokio::net::TcpListener;
use tokio::sync::watch;

pub use backend::{Backend, BackendError, BackendOptions};

pub const DEFAULT_API_ADDR: &str = "127.0.0.1:8461";

async fn serve(backend: Arc<Backend>, listener: TcpListener, stop: watch::Sender<bool>) -> anyhow::Result<()> {
    let mut stopped = stop.subscribe();
    let app = routes::router(routes::AppState::new(backend, stop));
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            tokio::select! {
                _ = stopped.wait_for(|s| *s) => {}
                _ = tokio::signal::ctrl_c() => {}
            }
        })
        .await
        .context("http server")
}

/// Serves until `POST /v1/shutdown` or Ctrl-C, then stops indexing and
/// flushes the stores.
pub fn run_blocking(backend: Arc<Backend>, addr: &str) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("tokio runtime")?;
    let result = runtime.block_on(async {
        let listener = TcpListener::bind(addr)
            .await
            .with_context(|| format!("bind {addr}"))?;
        log::info!("listening on {}", listener.local_addr()?);
        let (stop, _) = watch::channel(false);
        serve(Arc::clone(&backend), listener, stop).await
    });
    backend.shutdown();
    result
}

/// A server on a background thread, stopped on drop.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub backend: Arc<Backend>,
    stop: watch::Sender<bool>,
    thread: Option<JoinHandle<anyhow::Result<()>>>,
}

impl RunningServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves `backend`.
    pub fn start(backend: Arc<Backend>, addr: &str) -> anyhow::Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr).with_context(|| format!("bind {addr}"))?;
        std_listener.set_nonblocking(true)?;
        let local = std_listener.local_addr()?;
        let (stop, _) = watch::channel(false);
        let server_stop = stop.clone();
        let server_backend = Arc::clone(&backend);
        let thread = std::thread::Builder::new()
            .name("needle-http".into())
            .spawn(move || {
                let runtime = tokio::runtime::Builder::new_multi_thread()
                    .enable_all()
                    .build()?;
                runtime.block_on(async move {
                    let listener = TcpListener::from_std(std_listener)?;
                    serve(server_backend, listener, server_stop).await
                })
            })?;
        Ok(Self {
            addr: local,
            backend,
            stop,
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops serving, waits for the server thread, then shuts the backend down.
    pub fn stop(&mut self) -> anyhow::Result<()> {
        let _ = self.stop.send(true);
        let result = match self.thread.take() {
            Some(t) => t.join().map_err(|_| anyhow::anyhow!("server thread panicked"))?,
            None => Ok(()),
        };
        self.backend.shutdown();
        result
    }

    /// Blocks until the server exits, e.g. after `POST /v1/shutdown`.
    pub fn wait(mut self) -> anyhow::Result<()> {
        let result = match self.thread.take() {
            Some(t) => t.join().map_err(|_| anyhow::anyhow!("server thread panicked"))?,
            None => Ok(()),
        };
        self.backend.shutdown();
        result
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if self.thread.is_some() {
            let _ = self.stop();
        }
    }
}
