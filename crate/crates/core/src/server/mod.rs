//! The server: a driver that accepts client control connections and a pool
//! of workers that hold distributed matrices and execute library routines.
//!
//! Everything runs in one process. Workers are threads with their own data
//! endpoints; they talk to each other through a pluggable [`Transport`].

mod driver;
pub mod plugin;
mod pool;
mod session;
mod state;
mod worker;

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

pub use plugin::{Args, LibraryPlugin, PluginRegistry, Routine, RoutineContext, RoutineTable};
pub use pool::{PoolStatus, WorkerPool};
pub use worker::{MatrixSlot, WorkerStore};

use self::state::ServerCore;
use crate::comm::{
    Instrumented, TrafficSnapshot, Transport, TransportRegistry, DEFAULT_COLLECTIVE_TIMEOUT,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub name: String,
    /// Driver control endpoint, `HOST:PORT`. Port 0 picks a free port.
    pub listen: String,
    pub workers: usize,
    /// Worker `r` binds its data endpoint on `worker_port_base + r`; 0 means
    /// ephemeral ports.
    pub worker_port_base: u16,
    /// Name in [`TransportRegistry::default`]: `inproc` or `tcp`.
    pub transport: String,
    pub info_file: Option<PathBuf>,
    pub collective_timeout: Duration,
    /// How long sealing a matrix waits for outstanding rows.
    pub seal_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            name: format!("alembic-server/{}", env!("CARGO_PKG_VERSION")),
            listen: "127.0.0.1:0".into(),
            workers: 4,
            worker_port_base: 0,
            transport: "inproc".into(),
            info_file: None,
            collective_timeout: DEFAULT_COLLECTIVE_TIMEOUT,
            seal_timeout: Duration::from_secs(120),
        }
    }
}

impl ServerConfig {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }
}

/// Connection details a server publishes for clients: hostname, address and
/// port, one per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerInfo {
    pub hostname: String,
    pub addr: SocketAddr,
}

impl ServerInfo {
    pub fn render(&self) -> String {
        format!(
            "{}\n{}\n{}\n",
            self.hostname,
            self.addr.ip(),
            self.addr.port()
        )
    }

    pub fn parse(text: &str) -> Result<ServerInfo> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let [hostname, ip, port] = lines[..] else {
            return Err(Error::Argument(format!(
                "info file must have 3 lines, found {}",
                lines.len()
            )));
        };
        let ip: IpAddr = ip
            .parse()
            .map_err(|_| Error::Argument(format!("bad address {ip:?} in info file")))?;
        let port: u16 = port
            .parse()
            .map_err(|_| Error::Argument(format!("bad port {port:?} in info file")))?;
        Ok(ServerInfo {
            hostname: hostname.to_owned(),
            addr: SocketAddr::new(ip, port),
        })
    }

    pub fn read(path: &Path) -> Result<ServerInfo> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

pub struct Server;

impl Server {
    /// Start a server with the built-in libraries.
    pub fn start(config: ServerConfig) -> Result<ServerHandle> {
        Self::start_with(config, PluginRegistry::with_builtins())
    }

    pub fn start_with(config: ServerConfig, plugins: PluginRegistry) -> Result<ServerHandle> {
        if config.workers == 0 {
            return Err(Error::Argument(
                "the worker pool needs at least one worker".into(),
            ));
        }
        let listener = TcpListener::bind(config.listen.as_str())
            .map_err(|e| Error::Resource(format!("cannot bind {}: {e}", config.listen)))?;
        let addr = listener.local_addr()?;
        let bind_host = addr.ip().to_string();
        let advertised = if addr.ip().is_unspecified() {
            IpAddr::V4(Ipv4Addr::LOCALHOST)
        } else {
            addr.ip()
        };

        let transport = TransportRegistry::default().build(
            &config.transport,
            config.workers,
            &advertised.to_string(),
        )?;
        let transport = Instrumented::new(transport);
        let mut workers = Vec::with_capacity(config.workers);
        for w in 0..config.workers {
            let port = if config.worker_port_base == 0 {
                0
            } else {
                u16::try_from(config.worker_port_base as usize + w).map_err(|_| {
                    Error::Argument(format!(
                        "worker port base {} too high",
                        config.worker_port_base
                    ))
                })?
            };
            workers.push(worker::Worker::start(w as u32, &bind_host, port)?);
        }

        let core = Arc::new(ServerCore::new(
            config.name.clone(),
            workers,
            plugins,
            transport,
            config.collective_timeout,
            config.seal_timeout,
        ));
        let info = ServerInfo {
            hostname: hostname(),
            addr: SocketAddr::new(advertised, addr.port()),
        };
        if let Some(path) = &config.info_file {
            info.write(path)?;
        }

        let shared = Arc::new(Shared {
            stopping: AtomicBool::new(false),
            conns: Mutex::new(HashMap::new()),
            next: AtomicU64::new(0),
        });
        let accept = {
            let core = core.clone();
            let shared = shared.clone();
            thread::Builder::new()
                .name("driver-accept".into())
                .spawn(move || accept_loop(listener, core, shared))?
        };
        log::info!(
            "{} listening on {addr} with {} workers ({})",
            config.name,
            config.workers,
            config.transport
        );
        Ok(ServerHandle {
            core,
            shared,
            addr: info.addr,
            info,
            accept: Some(accept),
        })
    }
}

struct Shared {
    stopping: AtomicBool,
    conns: Mutex<HashMap<u64, TcpStream>>,
    next: AtomicU64,
}

fn accept_loop(listener: TcpListener, core: Arc<ServerCore>, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let key = shared.next.fetch_add(1, Ordering::Relaxed);
        if let Ok(c) = stream.try_clone() {
            shared.conns.lock().unwrap().insert(key, c);
        }
        let core = core.clone();
        let shared = shared.clone();
        let spawned = thread::Builder::new()
            .name("driver-conn".into())
            .spawn(move || {
                if let Err(e) = driver::serve_control(core, stream) {
                    log::debug!("control connection ended: {e}");
                }
                shared.conns.lock().unwrap().remove(&key);
            });
        if let Err(e) = spawned {
            log::warn!("cannot spawn control connection thread: {e}");
        }
    }
}

fn hostname() -> String {
    std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
        .map(|h| h.trim().to_owned())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "localhost".into())
}

/// A running server. Dropping it shuts the server down.
pub struct ServerHandle {
    core: Arc<ServerCore>,
    shared: Arc<Shared>,
    addr: SocketAddr,
    info: ServerInfo,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// Driver control endpoint.
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn info(&self) -> &ServerInfo {
        &self.info
    }

    pub fn worker_endpoints(&self) -> Vec<SocketAddr> {
        self.core.workers.iter().map(|w| w.data_addr()).collect()
    }

    pub fn pool_status(&self) -> PoolStatus {
        self.core.pool_status()
    }

    pub fn session_count(&self) -> usize {
        self.core.session_count()
    }

    pub fn transport_name(&self) -> String {
        self.core.transport.name().to_owned()
    }

    /// Worker-to-worker traffic since start or the last reset.
    pub fn traffic(&self) -> TrafficSnapshot {
        self.core.transport.snapshot()
    }

    pub fn reset_traffic(&self) {
        self.core.transport.reset();
    }

    /// SEND_ROWS frames received by each worker, in pool order.
    pub fn send_rows_frames(&self) -> Vec<u64> {
        self.core
            .workers
            .iter()
            .map(|w| w.counters().send_rows_frames.load(Ordering::Relaxed))
            .collect()
    }

    /// Matrices currently held, summed over workers.
    pub fn resident_blocks(&self) -> usize {
        self.core
            .workers
            .iter()
            .map(|w| w.store().matrix_count())
            .sum()
    }

    /// Block until the server is shut down from another thread.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for (_, c) in self.shared.conns.lock().unwrap().drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
        for w in &self.core.workers {
            w.shutdown();
        }
        log::info!("server on {} stopped", self.addr);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn info_file_round_trip() {
        let info = ServerInfo {
            hostname: "node7".into(),
            addr: "10.1.2.3:24960".parse().unwrap(),
        };
        assert_eq!(info.render(), "node7\n10.1.2.3\n24960\n");
        assert_eq!(ServerInfo::parse(&info.render()).unwrap(), info);
        assert!(ServerInfo::parse("node7\n10.1.2.3\n").is_err());
        assert!(ServerInfo::parse("a\nb\nc\n").is_err());
    }

    #[test]
    fn start_and_stop() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.info");
        let cfg = ServerConfig {
            workers: 3,
            info_file: Some(path.clone()),
            ..ServerConfig::default()
        };
        let mut s = Server::start(cfg).unwrap();
        assert_eq!(ServerInfo::read(&path).unwrap().addr, s.addr());
        assert_eq!(s.worker_endpoints().len(), 3);
        assert_eq!(
            s.pool_status(),
            PoolStatus {
                size: 3,
                free: 3,
                assigned: 0
            }
        );
        s.shutdown();
        s.shutdown();
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(Server::start(ServerConfig::with_workers(0)).is_err());
    }
}
