//! Client side of the bridge.
//!
//! A [`BridgeContext`] owns the control connection to the driver and the
//! data connections of the calling process. Additional client processes
//! (executors of a data-parallel job) get their own data connections through
//! [`BridgeContext::executor`].

mod executor;
mod source;
pub mod wrappers;

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, OnceLock};
use std::thread;
use std::time::Duration;

pub use executor::{send_frame_payload_len, BatchPolicy, Executor, LinkCounters};
pub use source::{split_rows, DenseRows, LocalRowPartition, RowSource, UniformRows};
pub use wrappers::{MathLibClient, SvdResult};

use crate::dense::DenseMatrix;
use crate::distmatrix::{LayoutDescriptor, MatrixHandle};
use crate::error::{Error, Result};
use crate::protocol::{
    self, decode_error_payload, decode_values, encode_values, Command, Opcode, Value,
    DEFAULT_BATCH_BYTES, FRAME_HEADER_LEN, PROTOCOL_VERSION,
};
use crate::server::ServerInfo;

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub name: String,
    pub batch: BatchPolicy,
    pub fetch_batch_bytes: usize,
    pub connect_timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            name: "alembic-client".into(),
            batch: BatchPolicy::default(),
            fetch_batch_bytes: DEFAULT_BATCH_BYTES,
            connect_timeout: Duration::from_secs(10),
        }
    }
}

/// Bytes and requests on the control connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControlStats {
    pub requests: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl ControlStats {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }

    pub fn minus(&self, earlier: &ControlStats) -> ControlStats {
        ControlStats {
            requests: self.requests - earlier.requests,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
        }
    }
}

struct Control {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    stats: ControlStats,
}

impl Control {
    fn request(&mut self, op: Opcode, session: u32, args: &[Value]) -> Result<(u32, Vec<Value>)> {
        let lost = |e: Error| Error::Connect(format!("lost the driver connection: {e}"));
        let sent = protocol::write_frame(
            &mut self.writer,
            Command::Request(op),
            session,
            &encode_values(args),
        )
        .map_err(lost)?;
        self.writer.flush().map_err(|e| lost(e.into()))?;
        self.stats.requests += 1;
        self.stats.bytes_sent += sent as u64;
        let frame = protocol::read_frame(&mut self.reader)?
            .ok_or_else(|| Error::Connect("driver closed the connection".into()))?;
        self.stats.bytes_received += (FRAME_HEADER_LEN + frame.payload.len()) as u64;
        match frame.command {
            Command::Response(got) if got == op => {
                Ok((frame.session_id, decode_values(&frame.payload)?))
            }
            Command::Error => Err(decode_error_payload(&frame.payload)?),
            other => Err(Error::Protocol(format!(
                "expected a {op:?} response, got command 0x{:02x}",
                other.code()
            ))),
        }
    }
}

/// Workers granted to this session.
struct Group {
    endpoints: Vec<String>,
    primary: Executor,
}

/// A client session: control channel to the driver plus this process's data
/// connections.
pub struct BridgeContext {
    config: ClientConfig,
    driver: SocketAddr,
    session_id: u32,
    server_name: String,
    pool_size: usize,
    control: Mutex<Control>,
    group: OnceLock<Group>,
    layouts: Mutex<HashMap<u32, LayoutDescriptor>>,
    closed: AtomicBool,
}

impl BridgeContext {
    pub fn connect(addr: impl ToSocketAddrs, config: ClientConfig) -> Result<BridgeContext> {
        let driver = addr
            .to_socket_addrs()
            .map_err(|e| Error::Connect(format!("cannot resolve driver address: {e}")))?
            .next()
            .ok_or_else(|| Error::Connect("driver address resolved to nothing".into()))?;
        let stream = TcpStream::connect_timeout(&driver, config.connect_timeout)
            .map_err(|e| Error::Connect(format!("cannot reach driver at {driver}: {e}")))?;
        stream.set_nodelay(true)?;
        let mut control = Control {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            stats: ControlStats::default(),
        };
        let (sid, info) = control.request(
            Opcode::Handshake,
            0,
            &[
                Value::I32(PROTOCOL_VERSION),
                Value::Str(config.name.clone()),
            ],
        )?;
        let server_name = info
            .first()
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned();
        let pool_size = info.get(1).and_then(Value::as_i64).unwrap_or(0) as usize;
        log::debug!("session {sid} opened on {server_name} at {driver}");
        Ok(BridgeContext {
            config,
            driver,
            session_id: sid,
            server_name,
            pool_size,
            control: Mutex::new(control),
            group: OnceLock::new(),
            layouts: Mutex::new(HashMap::new()),
            closed: AtomicBool::new(false),
        })
    }

    /// Connect using a server info file (hostname, address, port lines).
    pub fn connect_info_file(path: &Path, config: ClientConfig) -> Result<BridgeContext> {
        let info = ServerInfo::read(path)?;
        Self::connect(info.addr, config)
    }

    pub fn session_id(&self) -> u32 {
        self.session_id
    }

    pub fn driver_addr(&self) -> SocketAddr {
        self.driver
    }

    pub fn server_name(&self) -> &str {
        &self.server_name
    }

    /// Size of the server's worker pool at handshake time.
    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn control_stats(&self) -> ControlStats {
        self.control.lock().unwrap().stats
    }

    fn call(&self, op: Opcode, args: &[Value]) -> Result<Vec<Value>> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::ContextClosed(format!(
                "session {} was stopped",
                self.session_id
            )));
        }
        let mut c = self.control.lock().unwrap();
        c.request(op, self.session_id, args).map(|(_, v)| v)
    }

    fn group(&self) -> Result<&Group> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::ContextClosed(format!(
                "session {} was stopped",
                self.session_id
            )));
        }
        self.group
            .get()
            .ok_or_else(|| Error::ProtocolState("request workers first".into()))
    }

    /// Reserve `n` workers for this session and open data connections to
    /// them. Returns the number granted.
    pub fn request_workers(&self, n: usize) -> Result<usize> {
        let out = self.call(Opcode::RequestWorkers, &[Value::I32(n as i32)])?;
        let endpoints: Vec<String> = out
            .iter()
            .skip(1)
            .filter_map(|v| v.as_str().map(str::to_owned))
            .collect();
        if out.first().and_then(Value::as_i64) != Some(endpoints.len() as i64)
            || endpoints.len() != n
        {
            return Err(Error::Protocol(format!(
                "driver granted {:?} for a request of {n} workers",
                out
            )));
        }
        let primary = self.new_executor(&endpoints)?;
        self.group
            .set(Group { endpoints, primary })
            .map_err(|_| Error::ProtocolState("workers already requested".into()))?;
        Ok(n)
    }

    pub fn workers(&self) -> usize {
        self.group.get().map_or(0, |g| g.endpoints.len())
    }

    pub fn worker_endpoints(&self) -> Vec<String> {
        self.group
            .get()
            .map(|g| g.endpoints.clone())
            .unwrap_or_default()
    }

    fn new_executor(&self, endpoints: &[String]) -> Result<Executor> {
        Executor::connect(
            self.session_id,
            endpoints,
            self.config.batch,
            self.config.fetch_batch_bytes,
            self.config.connect_timeout,
        )
    }

    /// Data connections for another client process of this session.
    pub fn executor(&self) -> Result<Executor> {
        let g = self.group()?;
        self.new_executor(&g.endpoints)
    }

    /// Counters of this process's own data connections, per worker.
    pub fn data_counters(&self) -> Vec<LinkCounters> {
        self.group
            .get()
            .map(|g| g.primary.counters())
            .unwrap_or_default()
    }

    /// Make library `name` available to RUN; `locator` names it on the
    /// server (empty means `name`).
    pub fn register_library(&self, name: &str, locator: &str) -> Result<()> {
        self.call(
            Opcode::RegisterLibrary,
            &[Value::from(name), Value::from(locator)],
        )?;
        Ok(())
    }

    /// Allocate an empty distributed matrix on the session's workers.
    pub fn create_matrix(&self, rows: u64, cols: u64) -> Result<(MatrixHandle, LayoutDescriptor)> {
        let out = self.call(
            Opcode::CreateMatrix,
            &[Value::I64(rows as i64), Value::I64(cols as i64)],
        )?;
        let h = out
            .first()
            .and_then(Value::as_matrix)
            .ok_or_else(|| Error::Protocol("CREATE_MATRIX reply lacks a handle".into()))?;
        let bounds = out[1..]
            .iter()
            .map(|v| v.as_i64().map(|b| b as u64))
            .collect::<Option<Vec<u64>>>()
            .ok_or_else(|| {
                Error::Protocol("CREATE_MATRIX reply has non-integer boundaries".into())
            })?;
        let layout = LayoutDescriptor::from_boundaries(h.rows, h.cols, bounds)?;
        if layout != LayoutDescriptor::new(h.rows, h.cols, layout.workers())? {
            return Err(Error::Protocol(format!(
                "driver announced a non-standard layout {:?}",
                layout.boundaries()
            )));
        }
        self.layouts.lock().unwrap().insert(h.id, layout.clone());
        Ok((h, layout))
    }

    /// Wait for the driver to confirm every row of `h` arrived exactly once.
    pub fn seal(&self, h: &MatrixHandle) -> Result<()> {
        self.call(Opcode::CreateMatrix, &[Value::Matrix(*h)])?;
        Ok(())
    }

    pub fn layout(&self, h: &MatrixHandle) -> Result<LayoutDescriptor> {
        if let Some(l) = self.layouts.lock().unwrap().get(&h.id) {
            return Ok(l.clone());
        }
        LayoutDescriptor::new(h.rows, h.cols, self.group()?.endpoints.len())
    }

    /// Create a matrix and stream it from one or more client processes.
    /// `parts[0]` uses this process's connections; every further part runs
    /// concurrently on its own connections, like a separate executor.
    pub fn send_matrix(
        &self,
        rows: u64,
        cols: u64,
        parts: &[&dyn RowSource],
    ) -> Result<MatrixHandle> {
        self.send_matrix_with_report(rows, cols, parts)
            .map(|(h, _)| h)
    }

    /// As [`send_matrix`](Self::send_matrix), also returning per-part,
    /// per-worker traffic.
    pub fn send_matrix_with_report(
        &self,
        rows: u64,
        cols: u64,
        parts: &[&dyn RowSource],
    ) -> Result<(MatrixHandle, Vec<Vec<LinkCounters>>)> {
        let g = self.group()?;
        let (h, layout) = self.create_matrix(rows, cols)?;
        let results: Vec<Result<Vec<LinkCounters>>> = thread::scope(|s| {
            let handles: Vec<_> = parts
                .iter()
                .enumerate()
                .map(|(i, part)| {
                    let layout = &layout;
                    s.spawn(move || -> Result<Vec<LinkCounters>> {
                        let extra;
                        let exec = if i == 0 {
                            &g.primary
                        } else {
                            extra = self.new_executor(&g.endpoints)?;
                            &extra
                        };
                        let before = exec.counters();
                        exec.send_rows(&h, layout, *part)?;
                        Ok(exec
                            .counters()
                            .iter()
                            .zip(&before)
                            .map(|(a, b)| a.minus(b))
                            .collect())
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|t| {
                    t.join()
                        .unwrap_or_else(|_| Err(Error::Internal("send thread panicked".into())))
                })
                .collect()
        });
        let report = results.into_iter().collect::<Result<Vec<_>>>()?;
        self.seal(&h)?;
        Ok((h, report))
    }

    /// Send a local dense matrix from this process.
    pub fn send_dense(&self, m: &DenseMatrix) -> Result<MatrixHandle> {
        self.send_matrix(m.rows() as u64, m.cols() as u64, &[&DenseRows::all(m)])
    }

    /// Rows `range` of a server-resident matrix.
    pub fn fetch_rows(&self, h: &MatrixHandle, range: Range<u64>) -> Result<DenseMatrix> {
        let g = self.group()?;
        g.primary.fetch_rows(h, &self.layout(h)?, range)
    }

    pub fn fetch_matrix(&self, h: &MatrixHandle) -> Result<DenseMatrix> {
        self.fetch_rows(h, 0..h.rows)
    }

    /// Invoke `library.routine` on the session's workers. Matrix outputs come
    /// back as handles; their data stays on the workers.
    pub fn run(&self, library: &str, routine: &str, args: &[Value]) -> Result<Vec<Value>> {
        let mut full = Vec::with_capacity(args.len() + 2);
        full.push(Value::from(library));
        full.push(Value::from(routine));
        full.extend_from_slice(args);
        self.call(Opcode::Run, &full)
    }

    /// End the session and release its workers. Further calls fail with
    /// `ContextClosed`; stopping twice is a no-op.
    pub fn stop(&self) -> Result<()> {
        if self.closed.swap(true, Ordering::SeqCst) {
            return Ok(());
        }
        let mut c = self.control.lock().unwrap();
        c.request(Opcode::Close, self.session_id, &[])?;
        Ok(())
    }

    pub fn is_stopped(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}

impl Drop for BridgeContext {
    fn drop(&mut self) {
        if let Err(e) = self.stop() {
            log::debug!("closing session {}: {e}", self.session_id);
        }
    }
}
