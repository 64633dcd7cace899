use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use super::WorkerId;
use crate::error::{Error, Result};

/// Point-to-point message delivery between workers. Messages between one
/// ordered (group, from, to) triple are delivered in FIFO order.
pub trait Transport: Send + Sync {
    fn name(&self) -> &str;

    fn send(&self, group: u32, from: WorkerId, to: WorkerId, data: Vec<u8>) -> Result<()>;

    fn recv(&self, group: u32, from: WorkerId, to: WorkerId, timeout: Duration) -> Result<Vec<u8>>;

    /// Discard undelivered messages of a group that will not be used again.
    fn forget_group(&self, _group: u32) {}
}

type Key = (u32, WorkerId, WorkerId);

/// Per-(group, from, to) FIFO queues. Both transports deliver into one.
#[derive(Default)]
pub struct Mailbox {
    queues: Mutex<HashMap<Key, (Sender<Vec<u8>>, Receiver<Vec<u8>>)>>,
}

impl Mailbox {
    fn queue(&self, key: Key) -> (Sender<Vec<u8>>, Receiver<Vec<u8>>) {
        let mut q = self.queues.lock().unwrap();
        q.entry(key).or_insert_with(unbounded).clone()
    }

    pub fn deliver(&self, group: u32, from: WorkerId, to: WorkerId, data: Vec<u8>) {
        let (tx, _) = self.queue((group, from, to));
        // The receiver half lives in the map, so this cannot fail.
        let _ = tx.send(data);
    }

    pub fn take(
        &self,
        group: u32,
        from: WorkerId,
        to: WorkerId,
        timeout: Duration,
    ) -> Result<Vec<u8>> {
        let (_, rx) = self.queue((group, from, to));
        match rx.recv_timeout(timeout) {
            Ok(data) => Ok(data),
            Err(RecvTimeoutError::Timeout) => Err(Error::GroupFailure(format!(
                "worker {to} timed out after {timeout:?} waiting for worker {from} (group {group})"
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::GroupFailure(format!(
                "channel from worker {from} to {to} closed"
            ))),
        }
    }

    /// Drop every queue that belongs to `group`.
    pub fn clear_group(&self, group: u32) {
        self.queues.lock().unwrap().retain(|k, _| k.0 != group);
    }
}

/// Workers as threads of one process: delivery is a queue push.
#[derive(Default)]
pub struct InProcTransport {
    mailbox: Mailbox,
}

impl InProcTransport {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }
}

impl Transport for InProcTransport {
    fn name(&self) -> &str {
        "inproc"
    }

    fn send(&self, group: u32, from: WorkerId, to: WorkerId, data: Vec<u8>) -> Result<()> {
        self.mailbox.deliver(group, from, to, data);
        Ok(())
    }

    fn recv(&self, group: u32, from: WorkerId, to: WorkerId, timeout: Duration) -> Result<Vec<u8>> {
        self.mailbox.take(group, from, to, timeout)
    }

    fn forget_group(&self, group: u32) {
        self.mailbox.clear_group(group);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub messages: u64,
    pub bytes: u64,
}

/// Snapshot of per-link traffic recorded by [`Instrumented`].
#[derive(Debug, Clone, Default)]
pub struct TrafficSnapshot {
    pub links: BTreeMap<(WorkerId, WorkerId), LinkStats>,
}

impl TrafficSnapshot {
    pub fn total_bytes(&self) -> u64 {
        self.links.values().map(|s| s.bytes).sum()
    }

    /// Bytes sent in either direction between any member of `a` and any member of `b`.
    pub fn bytes_between(&self, a: &[WorkerId], b: &[WorkerId]) -> u64 {
        self.links
            .iter()
            .filter(|((from, to), _)| {
                (a.contains(from) && b.contains(to)) || (b.contains(from) && a.contains(to))
            })
            .map(|(_, s)| s.bytes)
            .sum()
    }

    /// Bytes sent from members of `set` to members of `set`.
    pub fn bytes_within(&self, set: &[WorkerId]) -> u64 {
        self.links
            .iter()
            .filter(|((from, to), _)| set.contains(from) && set.contains(to))
            .map(|(_, s)| s.bytes)
            .sum()
    }
}

/// Counts messages and payload bytes per (from, to) worker link.
pub struct Instrumented {
    inner: Arc<dyn Transport>,
    links: Mutex<BTreeMap<(WorkerId, WorkerId), LinkStats>>,
}

impl Instrumented {
    pub fn new(inner: Arc<dyn Transport>) -> Arc<Self> {
        Arc::new(Self {
            inner,
            links: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn snapshot(&self) -> TrafficSnapshot {
        TrafficSnapshot {
            links: self.links.lock().unwrap().clone(),
        }
    }

    pub fn reset(&self) {
        self.links.lock().unwrap().clear();
    }
}

impl Transport for Instrumented {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn send(&self, group: u32, from: WorkerId, to: WorkerId, data: Vec<u8>) -> Result<()> {
        {
            let mut links = self.links.lock().unwrap();
            let s = links.entry((from, to)).or_default();
            s.messages += 1;
            s.bytes += data.len() as u64;
        }
        self.inner.send(group, from, to, data)
    }

    fn recv(&self, group: u32, from: WorkerId, to: WorkerId, timeout: Duration) -> Result<Vec<u8>> {
        self.inner.recv(group, from, to, timeout)
    }

    fn forget_group(&self, group: u32) {
        self.inner.forget_group(group);
    }
}

/// Builds a transport connecting `workers` workers whose peer endpoints bind
/// on `host`.
pub type TransportFactory = fn(workers: usize, host: &str) -> Result<Arc<dyn Transport>>;

/// Name → factory table used by the server launcher's `--transport` flag.
pub struct TransportRegistry {
    factories: BTreeMap<String, TransportFactory>,
}

impl TransportRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: TransportFactory) {
        self.factories.insert(name.to_owned(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, workers: usize, host: &str) -> Result<Arc<dyn Transport>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::Argument(format!(
                "unknown transport {name:?}; known: {:?}",
                self.names()
            ))
        })?;
        factory(workers, host)
    }
}

impl Default for TransportRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("inproc", |_, _| {
            Ok(InProcTransport::new() as Arc<dyn Transport>)
        });
        r.register("tcp", |workers, host| {
            Ok(super::tcp::TcpTransport::bind(workers, host)? as Arc<dyn Transport>)
        });
        r
    }
}
