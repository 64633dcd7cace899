//! Driver operations, independent of how requests arrive.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::plugin::{OutputIds, PluginRegistry, RoutineContext};
use super::pool::{PoolStatus, WorkerPool};
use super::session::Session;
use super::worker::Worker;
use crate::comm::{Communicator, Instrumented, Transport, WorkerGroup, WorkerId};
use crate::distmatrix::{LayoutDescriptor, MatrixHandle};
use crate::error::{Error, ErrorCode, Result};
use crate::protocol::Value;

pub(crate) struct ServerCore {
    pub name: String,
    pub workers: Vec<Arc<Worker>>,
    pub pool: Mutex<WorkerPool>,
    pub sessions: Mutex<HashMap<u32, Arc<Mutex<Session>>>>,
    pub plugins: PluginRegistry,
    pub transport: Arc<Instrumented>,
    pub collective_timeout: Duration,
    pub seal_timeout: Duration,
    next_session: AtomicU32,
    next_group: AtomicU32,
    /// Matrix ids are unique across sessions so a handle from another
    /// session never resolves.
    next_matrix: AtomicU32,
}

impl ServerCore {
    pub fn new(
        name: String,
        workers: Vec<Arc<Worker>>,
        plugins: PluginRegistry,
        transport: Arc<Instrumented>,
        collective_timeout: Duration,
        seal_timeout: Duration,
    ) -> Self {
        let pool = Mutex::new(WorkerPool::new(workers.len()));
        Self {
            name,
            workers,
            pool,
            sessions: Mutex::new(HashMap::new()),
            plugins,
            transport,
            collective_timeout,
            seal_timeout,
            next_session: AtomicU32::new(1),
            next_group: AtomicU32::new(1),
            next_matrix: AtomicU32::new(1),
        }
    }

    pub fn pool_status(&self) -> PoolStatus {
        self.pool.lock().unwrap().status()
    }

    fn session(&self, sid: u32) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .unwrap()
            .get(&sid)
            .cloned()
            .ok_or_else(|| Error::SessionClosed(format!("session {sid} is not open")))
    }

    pub fn open_session(&self, client: String) -> u32 {
        let sid = self.next_session.fetch_add(1, Ordering::Relaxed);
        self.sessions
            .lock()
            .unwrap()
            .insert(sid, Arc::new(Mutex::new(Session::new(sid, client))));
        log::info!("session {sid} opened");
        sid
    }

    /// Reserve `n` workers for the session and return their data endpoints in
    /// rank order.
    pub fn request_workers(&self, sid: u32, n: i64) -> Result<Vec<String>> {
        let session = self.session(sid)?;
        let mut s = session.lock().unwrap();
        if s.members.is_some() {
            return Err(Error::ProtocolState(format!(
                "session {sid} already holds workers"
            )));
        }
        let n =
            usize::try_from(n).map_err(|_| Error::Argument(format!("invalid worker count {n}")))?;
        let members = self.pool.lock().unwrap().allocate(sid, n)?;
        for &w in &members {
            self.workers[w as usize].assign(sid);
        }
        log::info!("session {sid} assigned workers {members:?}");
        let endpoints = members
            .iter()
            .map(|&w| self.workers[w as usize].data_addr().to_string())
            .collect();
        s.members = Some(members);
        Ok(endpoints)
    }

    pub fn register_library(&self, sid: u32, name: &str, locator: &str) -> Result<()> {
        let session = self.session(sid)?;
        let key = if locator.is_empty() { name } else { locator };
        let plugin = self.plugins.get(key).ok_or_else(|| {
            Error::UnknownLibrary(format!(
                "no library at {key:?}; available: {:?}",
                self.plugins.keys()
            ))
        })?;
        session
            .lock()
            .unwrap()
            .libraries
            .insert(name.to_owned(), plugin);
        Ok(())
    }

    pub fn create_matrix(
        &self,
        sid: u32,
        rows: i64,
        cols: i64,
    ) -> Result<(MatrixHandle, LayoutDescriptor)> {
        let session = self.session(sid)?;
        let mut s = session.lock().unwrap();
        let members = s.members()?.to_vec();
        let (rows, cols) = match (u64::try_from(rows), u64::try_from(cols)) {
            (Ok(r), Ok(c)) if r > 0 && c > 0 => (r, c),
            _ => {
                return Err(Error::Argument(format!(
                    "invalid matrix dimensions {rows}x{cols}"
                )))
            }
        };
        let layout = LayoutDescriptor::new(rows, cols, members.len())?;
        let id = self.next_matrix.fetch_add(1, Ordering::Relaxed);
        for (rank, &w) in members.iter().enumerate() {
            self.workers[w as usize]
                .store()
                .create(sid, id, layout.clone(), rank);
        }
        s.matrices.insert(id, layout.clone());
        Ok((MatrixHandle::new(id, rows, cols), layout))
    }

    /// Wait until every row of the matrix has arrived exactly once.
    pub fn seal(&self, sid: u32, h: &MatrixHandle) -> Result<()> {
        let session = self.session(sid)?;
        let (members, layout) = {
            let s = session.lock().unwrap();
            (s.members()?.to_vec(), s.resolve(h)?.clone())
        };
        let started = Instant::now();
        let mut pause = Duration::from_micros(100);
        loop {
            let mut missing = Vec::new();
            let mut duplicates = 0;
            let mut errors = Vec::new();
            for &w in &members {
                let store = self.workers[w as usize].store();
                errors.extend(store.take_orphan_errors(sid));
                let slot = store
                    .get(sid, h.id)
                    .ok_or_else(|| Error::Internal(format!("worker {w} lost matrix {}", h.id)))?;
                errors.extend(slot.ingest_errors());
                let block = slot.block();
                missing.extend(block.missing_ranges());
                duplicates += block.duplicate_writes();
            }
            if let Some(first) = errors.first() {
                return Err(Error::from_wire(
                    first.code() as u16,
                    format!(
                        "matrix {}: {} rejected batch(es), first: {}",
                        h.id,
                        errors.len(),
                        first.detail()
                    ),
                ));
            }
            if duplicates > 0 {
                return Err(Error::Incomplete(format!(
                    "matrix {}: {duplicates} row(s) sent more than once",
                    h.id
                )));
            }
            if missing.is_empty() {
                return Ok(());
            }
            if started.elapsed() >= self.seal_timeout {
                let shown: Vec<String> = missing
                    .iter()
                    .take(8)
                    .map(|r| format!("[{},{})", r.start, r.end))
                    .collect();
                return Err(Error::Incomplete(format!(
                    "matrix {} ({}x{}) still missing rows {}{} after {:?}",
                    h.id,
                    layout.rows(),
                    layout.cols(),
                    shown.join(" "),
                    if missing.len() > 8 { " ..." } else { "" },
                    self.seal_timeout
                )));
            }
            thread::sleep(pause);
            pause = (pause * 2).min(Duration::from_millis(5));
        }
    }

    pub fn run(
        &self,
        sid: u32,
        library: &str,
        routine: &str,
        args: &[Value],
    ) -> Result<Vec<Value>> {
        let session = self.session(sid)?;
        let mut s = session.lock().unwrap();
        let plugin = s.libraries.get(library).cloned().ok_or_else(|| {
            Error::UnknownLibrary(format!(
                "library {library:?} is not registered in session {sid}"
            ))
        })?;
        let routine_impl = plugin.routine(routine).ok_or_else(|| {
            Error::UnknownRoutine(format!(
                "{library} has no routine {routine:?}; known: {:?}",
                plugin.routine_names()
            ))
        })?;
        let members = s.members()?.to_vec();
        for v in args {
            if let Value::Matrix(h) = v {
                s.resolve(h)?;
                for &w in &members {
                    let complete = self.workers[w as usize]
                        .store()
                        .get(sid, h.id)
                        .is_some_and(|sl| sl.block().is_complete());
                    if !complete {
                        return Err(Error::NotReady(format!(
                            "matrix {} has not received all its rows",
                            h.id
                        )));
                    }
                }
            }
        }

        let group_id = self.next_group.fetch_add(1, Ordering::Relaxed);
        let output_ids = OutputIds::new(&self.next_matrix);
        let transport: Arc<dyn Transport> = self.transport.clone();
        let results: Vec<(Result<Vec<Value>>, Vec<MatrixHandle>)> = thread::scope(|scope| {
            let handles: Vec<_> = (0..members.len())
                .map(|rank| {
                    let members = members.clone();
                    let transport = transport.clone();
                    let worker = &self.workers[members[rank] as usize];
                    let output_ids = &output_ids;
                    scope.spawn(move || {
                        let group = match WorkerGroup::new(group_id, members, rank) {
                            Ok(g) => g,
                            Err(e) => return (Err(e), Vec::new()),
                        };
                        let comm = Communicator::new(group, transport)
                            .with_timeout(self.collective_timeout);
                        let ctx = RoutineContext::new(comm, sid, worker.store(), output_ids);
                        let out = catch_unwind(AssertUnwindSafe(|| routine_impl.run(&ctx, args)))
                            .unwrap_or_else(|_| {
                                Err(Error::Internal(format!(
                                    "{library}.{routine} panicked on rank {rank}"
                                )))
                            });
                        (out, ctx.created())
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        (Err(Error::Internal("rank thread died".into())), Vec::new())
                    })
                })
                .collect()
        });
        self.transport.forget_group(group_id);

        let created: Vec<Vec<MatrixHandle>> = results.iter().map(|(_, c)| c.clone()).collect();
        let failure = pick_failure(results.iter().filter_map(|(r, _)| r.as_ref().err()));
        let consistent = created.windows(2).all(|w| w[0] == w[1]);
        if failure.is_some() || !consistent {
            self.discard_outputs(sid, &members, &output_ids.all());
            return Err(failure.unwrap_or_else(|| {
                Error::Internal(format!(
                    "{library}.{routine} produced different outputs on different ranks"
                ))
            }));
        }
        for h in &created[0] {
            s.matrices
                .insert(h.id, LayoutDescriptor::new(h.rows, h.cols, members.len())?);
        }
        let (out, _) = results
            .into_iter()
            .next()
            .expect("group has at least one rank");
        out
    }

    fn discard_outputs(&self, sid: u32, members: &[WorkerId], ids: &[u32]) {
        for &w in members {
            for &id in ids {
                self.workers[w as usize].store().remove(sid, id);
            }
        }
    }

    /// Release the session's workers and drop its matrices. Closing an
    /// unknown or already-closed session is a no-op.
    pub fn close_session(&self, sid: u32) {
        let Some(session) = self.sessions.lock().unwrap().remove(&sid) else {
            return;
        };
        let s = session.lock().unwrap();
        let released = self.pool.lock().unwrap().release(sid);
        for &w in &released {
            self.workers[w as usize].release(sid);
        }
        log::info!(
            "session {sid} ({}) closed, released workers {released:?}",
            s.client
        );
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }
}

/// The most informative error among ranks: a rank that merely timed out
/// waiting for a failed peer reports GroupFailure, so prefer anything else.
fn pick_failure<'e>(errors: impl Iterator<Item = &'e Error>) -> Option<Error> {
    let errors: Vec<&Error> = errors.collect();
    let chosen = errors
        .iter()
        .find(|e| e.code() != ErrorCode::GroupFailure)
        .or(errors.first())?;
    Some(Error::from_wire(chosen.code() as u16, chosen.detail()))
}
