//! Library plugin contract.
//!
//! A library is a named table of routines. The driver resolves
//! `(library, routine)` by name at RUN time and invokes the routine once per
//! rank of the session's worker group, concurrently. Each invocation sees its
//! own [`RoutineContext`]: the group communicator, read access to this
//! worker's blocks of the session's matrices, and a way to emit output
//! matrices.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use super::worker::WorkerStore;
use crate::comm::Communicator;
use crate::distmatrix::{LayoutDescriptor, LocalBlock, MatrixHandle};
use crate::error::{Error, Result};
use crate::protocol::Value;

pub trait Routine: Send + Sync {
    fn name(&self) -> &str;

    /// Executed collectively: every rank of the group calls this with the
    /// same `args`. Every rank must return the same outputs (or fail the same
    /// way); the driver reports rank 0's.
    fn run(&self, ctx: &RoutineContext<'_>, args: &[Value]) -> Result<Vec<Value>>;
}

pub trait LibraryPlugin: Send + Sync {
    fn name(&self) -> &str;

    fn routine(&self, name: &str) -> Option<&dyn Routine>;

    fn routine_names(&self) -> Vec<String>;
}

/// Name → routine map for libraries that are just a bag of routines.
#[derive(Default)]
pub struct RoutineTable {
    routines: BTreeMap<String, Box<dyn Routine>>,
}

impl RoutineTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, routine: impl Routine + 'static) -> Self {
        self.insert(Box::new(routine));
        self
    }

    pub fn insert(&mut self, routine: Box<dyn Routine>) {
        self.routines.insert(routine.name().to_owned(), routine);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Routine> {
        self.routines.get(name).map(|r| r.as_ref())
    }

    pub fn names(&self) -> Vec<String> {
        self.routines.keys().cloned().collect()
    }
}

/// Plugins the server can hand out, keyed by the locator clients pass to
/// REGISTER_LIBRARY.
#[derive(Clone, Default)]
pub struct PluginRegistry {
    plugins: BTreeMap<String, Arc<dyn LibraryPlugin>>,
}

impl PluginRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry preloaded with the built-in `mathlib`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("mathlib", Arc::new(crate::mathlib::MathLib::default()));
        r
    }

    pub fn register(&mut self, key: &str, plugin: Arc<dyn LibraryPlugin>) {
        self.plugins.insert(key.to_owned(), plugin);
    }

    pub fn get(&self, key: &str) -> Option<Arc<dyn LibraryPlugin>> {
        self.plugins.get(key).cloned()
    }

    pub fn keys(&self) -> Vec<String> {
        self.plugins.keys().cloned().collect()
    }
}

/// Output ids of one RUN, shared by all its ranks. The j-th output of every
/// rank gets the same id, drawn from the server-wide matrix id counter.
pub(crate) struct OutputIds<'a> {
    counter: &'a AtomicU32,
    ids: Mutex<Vec<u32>>,
}

impl<'a> OutputIds<'a> {
    pub(crate) fn new(counter: &'a AtomicU32) -> Self {
        Self {
            counter,
            ids: Mutex::new(Vec::new()),
        }
    }

    fn nth(&self, j: usize) -> u32 {
        let mut ids = self.ids.lock().unwrap();
        while ids.len() <= j {
            ids.push(self.counter.fetch_add(1, Ordering::Relaxed));
        }
        ids[j]
    }

    pub(crate) fn all(&self) -> Vec<u32> {
        self.ids.lock().unwrap().clone()
    }
}

/// Per-rank view handed to a routine for the duration of one call.
pub struct RoutineContext<'a> {
    comm: Communicator,
    session_id: u32,
    store: &'a WorkerStore,
    ids: &'a OutputIds<'a>,
    created: RefCell<Vec<MatrixHandle>>,
    emitted: Cell<usize>,
}

impl<'a> RoutineContext<'a> {
    pub(crate) fn new(
        comm: Communicator,
        session_id: u32,
        store: &'a WorkerStore,
        ids: &'a OutputIds<'a>,
    ) -> Self {
        Self {
            comm,
            session_id,
            store,
            ids,
            created: RefCell::new(Vec::new()),
            emitted: Cell::new(0),
        }
    }

    pub fn comm(&self) -> &Communicator {
        &self.comm
    }

    pub fn rank(&self) -> usize {
        self.comm.rank()
    }

    pub fn size(&self) -> usize {
        self.comm.size()
    }

    /// Block-row layout of a `rows x cols` matrix over this group.
    pub fn layout(&self, rows: u64, cols: u64) -> Result<LayoutDescriptor> {
        LayoutDescriptor::new(rows, cols, self.size())
    }

    /// This rank's block of an input matrix. Only valid for the duration of
    /// the call.
    pub fn input(&self, handle: &MatrixHandle) -> Result<Arc<LocalBlock>> {
        let slot = self.store.get(self.session_id, handle.id).ok_or_else(|| {
            Error::Handle(format!(
                "matrix {} not found in session {}",
                handle.id, self.session_id
            ))
        })?;
        if slot.layout().rows() != handle.rows || slot.layout().cols() != handle.cols {
            return Err(Error::Handle(format!(
                "matrix {} is {}x{}, handle claims {}x{}",
                handle.id,
                slot.layout().rows(),
                slot.layout().cols(),
                handle.rows,
                handle.cols
            )));
        }
        let block = slot.block();
        if !block.is_complete() {
            return Err(Error::NotReady(format!(
                "matrix {} is incomplete",
                handle.id
            )));
        }
        Ok(block)
    }

    /// Store this rank's rows of a new output matrix and return its handle.
    /// `local` must hold exactly the rows this rank owns, row-major.
    pub fn emit(&self, rows: u64, cols: u64, local: Vec<f64>) -> Result<MatrixHandle> {
        let layout = self.layout(rows, cols)?;
        let block = LocalBlock::from_data(layout.owned_range(self.rank()), cols, local)?;
        let id = self.ids.nth(self.emitted.get());
        self.emitted.set(self.emitted.get() + 1);
        self.store
            .insert_complete(self.session_id, id, layout, block);
        let handle = MatrixHandle::new(id, rows, cols);
        self.created.borrow_mut().push(handle);
        Ok(handle)
    }

    pub(crate) fn created(&self) -> Vec<MatrixHandle> {
        self.created.borrow().clone()
    }
}

/// Positional argument helpers shared by routine implementations.
pub struct Args<'v> {
    routine: &'v str,
    values: &'v [Value],
}

impl<'v> Args<'v> {
    pub fn new(routine: &'v str, values: &'v [Value], min: usize, max: usize) -> Result<Self> {
        if values.len() < min || values.len() > max {
            let want = if min == max {
                format!("{min}")
            } else {
                format!("{min}..={max}")
            };
            return Err(Error::Argument(format!(
                "{routine} takes {want} argument(s), got {}",
                values.len()
            )));
        }
        Ok(Self { routine, values })
    }

    fn bad(&self, i: usize, want: &str) -> Error {
        Error::Argument(format!(
            "{} argument {i} must be {want}, got {}",
            self.routine,
            self.values.get(i).map_or("nothing", Value::type_name)
        ))
    }

    pub fn matrix(&self, i: usize) -> Result<MatrixHandle> {
        self.values[i]
            .as_matrix()
            .ok_or_else(|| self.bad(i, "a matrix"))
    }

    pub fn int(&self, i: usize) -> Result<i64> {
        self.values[i]
            .as_i64()
            .ok_or_else(|| self.bad(i, "an integer"))
    }

    pub fn opt_int(&self, i: usize) -> Result<Option<i64>> {
        self.values
            .get(i)
            .map(|v| v.as_i64().ok_or_else(|| self.bad(i, "an integer")))
            .transpose()
    }

    pub fn opt_f64(&self, i: usize) -> Result<Option<f64>> {
        self.values
            .get(i)
            .map(|v| v.as_f64().ok_or_else(|| self.bad(i, "an f64")))
            .transpose()
    }

    pub fn opt_bool(&self, i: usize) -> Result<Option<bool>> {
        self.values
            .get(i)
            .map(|v| v.as_bool().ok_or_else(|| self.bad(i, "a bool")))
            .transpose()
    }
}
