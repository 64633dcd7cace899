//! Worker-side matrix store and data endpoint.
//!
//! Clients stream SEND_ROWS frames straight to the owning worker and read
//! results back with FETCH_ROWS; the driver never relays matrix data.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use crate::comm::WorkerId;
use crate::distmatrix::{LayoutDescriptor, LocalBlock};
use crate::error::{Error, Result};
use crate::protocol::{
    self, decode_row_batch, encode_error_payload, encode_row_batch_into, Command, FetchRequest,
    Frame, Opcode, ROW_BATCH_HEADER_LEN,
};

/// One worker's part of one matrix.
pub struct MatrixSlot {
    layout: LayoutDescriptor,
    block: RwLock<Arc<LocalBlock>>,
    ingest_errors: Mutex<Vec<Error>>,
}

impl MatrixSlot {
    pub fn layout(&self) -> &LayoutDescriptor {
        &self.layout
    }

    pub fn block(&self) -> Arc<LocalBlock> {
        self.block.read().unwrap().clone()
    }

    fn write(&self, batch: &protocol::RowBatch) {
        let mut guard = self.block.write().unwrap();
        if let Err(e) = Arc::make_mut(&mut guard).write_rows(batch) {
            self.ingest_errors.lock().unwrap().push(e);
        }
    }

    pub fn ingest_errors(&self) -> Vec<Error> {
        self.ingest_errors
            .lock()
            .unwrap()
            .iter()
            .map(|e| Error::from_wire(e.code() as u16, e.detail()))
            .collect()
    }
}

/// Matrices held by one worker, keyed by (session, matrix id).
#[derive(Default)]
pub struct WorkerStore {
    slots: RwLock<HashMap<(u32, u32), Arc<MatrixSlot>>>,
    // Batches naming a matrix this worker does not hold.
    orphan_errors: Mutex<HashMap<u32, Vec<Error>>>,
}

impl WorkerStore {
    pub fn get(&self, session: u32, matrix: u32) -> Option<Arc<MatrixSlot>> {
        self.slots.read().unwrap().get(&(session, matrix)).cloned()
    }

    /// Allocate an empty block for this worker's rows of a new matrix.
    pub fn create(&self, session: u32, matrix: u32, layout: LayoutDescriptor, rank: usize) {
        let block = LocalBlock::new(layout.owned_range(rank), layout.cols());
        self.insert_complete(session, matrix, layout, block);
    }

    pub(crate) fn insert_complete(
        &self,
        session: u32,
        matrix: u32,
        layout: LayoutDescriptor,
        block: LocalBlock,
    ) {
        let slot = MatrixSlot {
            layout,
            block: RwLock::new(Arc::new(block)),
            ingest_errors: Mutex::new(Vec::new()),
        };
        self.slots
            .write()
            .unwrap()
            .insert((session, matrix), Arc::new(slot));
    }

    pub fn remove(&self, session: u32, matrix: u32) {
        self.slots.write().unwrap().remove(&(session, matrix));
    }

    pub fn drop_session(&self, session: u32) {
        self.slots
            .write()
            .unwrap()
            .retain(|(s, _), _| *s != session);
        self.orphan_errors.lock().unwrap().remove(&session);
    }

    pub fn matrix_count(&self) -> usize {
        self.slots.read().unwrap().len()
    }

    /// Drain errors from batches that named no matrix of this session.
    pub fn take_orphan_errors(&self, session: u32) -> Vec<Error> {
        self.orphan_errors
            .lock()
            .unwrap()
            .remove(&session)
            .unwrap_or_default()
    }

    fn ingest(&self, session: u32, batch: &protocol::RowBatch) {
        match self.get(session, batch.matrix_id) {
            Some(slot) => slot.write(batch),
            None => self
                .orphan_errors
                .lock()
                .unwrap()
                .entry(session)
                .or_default()
                .push(Error::Handle(format!(
                    "rows {}..{} sent for unknown matrix {}",
                    batch.start_row,
                    batch.start_row + batch.num_rows as u64,
                    batch.matrix_id
                ))),
        }
    }
}

/// Counters for data-plane traffic seen by one worker.
#[derive(Debug, Default)]
pub struct WorkerCounters {
    pub send_rows_frames: AtomicU64,
    pub send_rows_bytes: AtomicU64,
    pub fetch_frames: AtomicU64,
}

pub struct Worker {
    id: WorkerId,
    data_addr: SocketAddr,
    store: WorkerStore,
    // Session currently holding this worker, 0 when free.
    assigned: AtomicUsize,
    counters: WorkerCounters,
    conns: Mutex<HashMap<u64, TcpStream>>,
    next_conn: AtomicU64,
    stopping: AtomicBool,
}

impl Worker {
    /// Bind the data endpoint and start accepting client connections.
    pub fn start(id: WorkerId, host: &str, port: u16) -> Result<Arc<Worker>> {
        let listener = TcpListener::bind((host, port))
            .map_err(|e| Error::Resource(format!("worker {id} cannot bind {host}:{port}: {e}")))?;
        let worker = Arc::new(Worker {
            id,
            data_addr: listener.local_addr()?,
            store: WorkerStore::default(),
            assigned: AtomicUsize::new(0),
            counters: WorkerCounters::default(),
            conns: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(0),
            stopping: AtomicBool::new(false),
        });
        let w = worker.clone();
        thread::Builder::new()
            .name(format!("worker-{id}-accept"))
            .spawn(move || w.accept_loop(listener))?;
        Ok(worker)
    }

    pub fn data_addr(&self) -> SocketAddr {
        self.data_addr
    }

    pub fn store(&self) -> &WorkerStore {
        &self.store
    }

    pub fn counters(&self) -> &WorkerCounters {
        &self.counters
    }

    pub(crate) fn assign(&self, session: u32) {
        self.assigned.store(session as usize, Ordering::SeqCst);
    }

    pub(crate) fn release(&self, session: u32) {
        self.assigned.store(0, Ordering::SeqCst);
        self.store.drop_session(session);
    }

    pub(crate) fn shutdown(&self) {
        self.stopping.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.data_addr);
        for (_, c) in self.conns.lock().unwrap().drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
    }

    fn accept_loop(self: Arc<Self>, listener: TcpListener) {
        for stream in listener.incoming() {
            if self.stopping.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let key = self.next_conn.fetch_add(1, Ordering::Relaxed);
            if let Ok(c) = stream.try_clone() {
                self.conns.lock().unwrap().insert(key, c);
            }
            let w = self.clone();
            let spawned = thread::Builder::new()
                .name(format!("worker-{}-conn", self.id))
                .spawn(move || {
                    if let Err(e) = w.serve(stream) {
                        log::debug!("worker {} data connection ended: {e}", w.id);
                    }
                    w.conns.lock().unwrap().remove(&key);
                });
            if let Err(e) = spawned {
                log::warn!("worker {}: cannot spawn connection thread: {e}", self.id);
            }
        }
    }

    fn serve(&self, stream: TcpStream) -> Result<()> {
        stream.set_nodelay(true)?;
        let mut reader = BufReader::with_capacity(1 << 20, stream.try_clone()?);
        let mut writer = BufWriter::with_capacity(1 << 20, stream);
        while let Some(frame) = protocol::read_frame(&mut reader)? {
            let sid = frame.session_id;
            let owner = self.assigned.load(Ordering::SeqCst) as u32;
            match frame.command {
                Command::Request(Opcode::SendRows) => {
                    self.counters
                        .send_rows_frames
                        .fetch_add(1, Ordering::Relaxed);
                    self.counters
                        .send_rows_bytes
                        .fetch_add(frame.payload.len() as u64, Ordering::Relaxed);
                    // Unacknowledged: problems surface when the driver seals the matrix.
                    if sid == 0 || sid != owner {
                        log::warn!(
                            "worker {}: SEND_ROWS for session {sid}, assigned to {owner}",
                            self.id
                        );
                        continue;
                    }
                    match decode_row_batch(&frame.payload) {
                        Ok(batch) => self.store.ingest(sid, &batch),
                        Err(e) => self
                            .store
                            .orphan_errors
                            .lock()
                            .unwrap()
                            .entry(sid)
                            .or_default()
                            .push(e.into()),
                    }
                }
                Command::Request(Opcode::FetchRows) => {
                    let res = if sid == 0 || sid != owner {
                        Err(Error::ProtocolState(format!(
                            "worker {} is not assigned to session {sid}",
                            self.id
                        )))
                    } else {
                        self.stream_rows(&mut writer, sid, &frame)
                    };
                    if let Err(e) = res {
                        protocol::write_frame(
                            &mut writer,
                            Command::Error,
                            sid,
                            &encode_error_payload(&e),
                        )?;
                    }
                    writer.flush()?;
                }
                other => {
                    let e = Error::Protocol(format!(
                        "command 0x{:02x} not accepted on a data connection",
                        other.code()
                    ));
                    protocol::write_frame(
                        &mut writer,
                        Command::Error,
                        sid,
                        &encode_error_payload(&e),
                    )?;
                    writer.flush()?;
                }
            }
        }
        Ok(())
    }

    fn stream_rows(&self, w: &mut impl Write, sid: u32, frame: &Frame) -> Result<()> {
        let req = FetchRequest::decode(&frame.payload)?;
        let slot = self.store.get(sid, req.matrix_id).ok_or_else(|| {
            Error::Handle(format!(
                "matrix {} not held by worker {}",
                req.matrix_id, self.id
            ))
        })?;
        let block = slot.block();
        if req.num_rows == 0 {
            // Sync marker: every earlier frame on this connection has been applied.
            let mut payload = Vec::with_capacity(ROW_BATCH_HEADER_LEN);
            encode_row_batch_into(
                &mut payload,
                req.matrix_id,
                req.start_row,
                0,
                block.cols(),
                &[],
            )?;
            protocol::write_frame(w, Command::Response(Opcode::FetchRows), sid, &payload)?;
            return Ok(());
        }
        let range = block.row_range();
        let end = req.start_row.checked_add(req.num_rows);
        if req.start_row < range.start || end.is_none_or(|e| e > range.end) {
            return Err(Error::OutOfRange(format!(
                "rows {}..+{} not owned by worker {} ({}..{})",
                req.start_row, req.num_rows, self.id, range.start, range.end
            )));
        }
        if !block.is_complete() {
            return Err(Error::NotReady(format!(
                "matrix {} is still missing rows {:?}",
                req.matrix_id,
                block.missing_ranges()
            )));
        }
        let n = block.cols() as usize;
        let per = req.batch_rows.max(1) as u64;
        let mut payload = Vec::new();
        let mut row = req.start_row;
        let end = req.start_row + req.num_rows;
        while row < end {
            let count = per.min(end - row);
            let local = (row - range.start) as usize;
            let data = &block.data()[local * n..(local + count as usize) * n];
            payload.clear();
            payload.reserve(ROW_BATCH_HEADER_LEN + data.len() * 8);
            encode_row_batch_into(
                &mut payload,
                req.matrix_id,
                row,
                count as u32,
                block.cols(),
                data,
            )?;
            protocol::write_frame(w, Command::Response(Opcode::FetchRows), sid, &payload)?;
            self.counters.fetch_frames.fetch_add(1, Ordering::Relaxed);
            row += count;
        }
        Ok(())
    }
}
