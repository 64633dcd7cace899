//! Worker-group communicator: broadcast, allgather, allreduce-sum and barrier
//! over an abstract point-to-point [`Transport`].
//!
//! All collectives are rooted at rank 0 (gather, then fan out). Reductions
//! sum contributions in rank order so every member receives bit-identical
//! results on every run.

mod tcp;
mod transport;

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

pub use tcp::TcpTransport;
pub use transport::{
    InProcTransport, Instrumented, LinkStats, Mailbox, TrafficSnapshot, Transport,
    TransportFactory, TransportRegistry,
};

use crate::error::{Error, Result};

/// Global index of a worker in the server's pool.
pub type WorkerId = u32;

pub const DEFAULT_COLLECTIVE_TIMEOUT: Duration = Duration::from_secs(60);

/// One member's view of a group: the ordered member list and its own rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerGroup {
    group_id: u32,
    members: Vec<WorkerId>,
    rank: usize,
}

impl WorkerGroup {
    pub fn new(group_id: u32, members: Vec<WorkerId>, rank: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Argument(
                "worker group must have at least one member".into(),
            ));
        }
        if rank >= members.len() {
            return Err(Error::Argument(format!(
                "rank {rank} outside group of size {}",
                members.len()
            )));
        }
        let mut sorted = members.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != members.len() {
            return Err(Error::Argument("worker listed twice in one group".into()));
        }
        Ok(Self {
            group_id,
            members,
            rank,
        })
    }

    pub fn group_id(&self) -> u32 {
        self.group_id
    }

    pub fn members(&self) -> &[WorkerId] {
        &self.members
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn worker(&self) -> WorkerId {
        self.members[self.rank]
    }
}

#[derive(Clone)]
pub struct Communicator {
    group: WorkerGroup,
    transport: Arc<dyn Transport>,
    timeout: Duration,
}

impl std::fmt::Debug for Communicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Communicator")
            .field("group", &self.group)
            .field("transport", &self.transport.name())
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl Communicator {
    pub fn new(group: WorkerGroup, transport: Arc<dyn Transport>) -> Self {
        Self {
            group,
            transport,
            timeout: DEFAULT_COLLECTIVE_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn group(&self) -> &WorkerGroup {
        &self.group
    }

    pub fn rank(&self) -> usize {
        self.group.rank
    }

    pub fn size(&self) -> usize {
        self.group.size()
    }

    pub fn send(&self, to_rank: usize, data: Vec<u8>) -> Result<()> {
        let to = *self
            .group
            .members
            .get(to_rank)
            .ok_or_else(|| Error::Argument(format!("rank {to_rank} outside group")))?;
        self.transport
            .send(self.group.group_id, self.group.worker(), to, data)
    }

    pub fn recv(&self, from_rank: usize) -> Result<Vec<u8>> {
        let from = *self
            .group
            .members
            .get(from_rank)
            .ok_or_else(|| Error::Argument(format!("rank {from_rank} outside group")))?;
        self.transport
            .recv(self.group.group_id, from, self.group.worker(), self.timeout)
    }

    /// Every member returns a copy of `root`'s `data`; other members' `data`
    /// is ignored.
    pub fn broadcast(&self, root: usize, data: &[u8]) -> Result<Vec<u8>> {
        if root >= self.size() {
            return Err(Error::Argument(format!(
                "broadcast root {root} outside group of size {}",
                self.size()
            )));
        }
        if self.rank() == root {
            for r in (0..self.size()).filter(|&r| r != root) {
                self.send(r, data.to_vec())?;
            }
            Ok(data.to_vec())
        } else {
            self.recv(root)
        }
    }

    /// Gather every member's contribution at `root`, in rank order.
    pub fn gather(&self, root: usize, local: &[u8]) -> Result<Option<Vec<Vec<u8>>>> {
        if root >= self.size() {
            return Err(Error::Argument(format!("gather root {root} outside group")));
        }
        if self.rank() != root {
            self.send(root, local.to_vec())?;
            return Ok(None);
        }
        let mut all = Vec::with_capacity(self.size());
        for r in 0..self.size() {
            all.push(if r == root {
                local.to_vec()
            } else {
                self.recv(r)?
            });
        }
        Ok(Some(all))
    }

    /// Every member receives all contributions ordered by rank. Lengths may differ.
    pub fn allgather(&self, local: &[u8]) -> Result<Vec<Vec<u8>>> {
        let gathered = self.gather(0, local)?;
        let packed = match gathered {
            Some(parts) => pack_parts(&parts),
            None => Vec::new(),
        };
        let packed = self.broadcast(0, &packed)?;
        unpack_parts(&packed, self.size())
    }

    /// Element-wise sum across ranks. Contributions are added in rank order.
    pub fn allreduce_sum(&self, local: &[f64]) -> Result<Vec<f64>> {
        let gathered = self.gather(0, &f64s_to_bytes(local))?;
        let reply = match gathered {
            Some(parts) => {
                let mut acc = local.to_vec();
                let mut mismatch = None;
                for (r, part) in parts.iter().enumerate().skip(1) {
                    if part.len() != local.len() * 8 {
                        mismatch = Some(format!(
                            "allreduce length mismatch: rank 0 has {} elements, rank {r} has {}",
                            local.len(),
                            part.len() / 8
                        ));
                        break;
                    }
                    for (a, c) in acc.iter_mut().zip(part.chunks_exact(8)) {
                        *a += f64::from_le_bytes(c.try_into().unwrap());
                    }
                }
                match mismatch {
                    Some(msg) => {
                        let mut out = vec![1u8];
                        out.extend_from_slice(msg.as_bytes());
                        out
                    }
                    None => {
                        let mut out = vec![0u8];
                        out.extend_from_slice(&f64s_to_bytes(&acc));
                        out
                    }
                }
            }
            None => Vec::new(),
        };
        let reply = self.broadcast(0, &reply)?;
        match reply.split_first() {
            Some((0, body)) => Ok(bytes_to_f64s(body)),
            Some((_, msg)) => Err(Error::Collective(String::from_utf8_lossy(msg).into_owned())),
            None => Err(Error::Collective("empty allreduce reply".into())),
        }
    }

    /// No member returns until every member has entered.
    pub fn barrier(&self) -> Result<()> {
        self.gather(0, &[])?;
        self.broadcast(0, &[])?;
        Ok(())
    }

    pub fn broadcast_f64(&self, root: usize, data: &[f64]) -> Result<Vec<f64>> {
        Ok(bytes_to_f64s(&self.broadcast(root, &f64s_to_bytes(data))?))
    }
}

fn pack_parts(parts: &[Vec<u8>]) -> Vec<u8> {
    let total: usize = parts.iter().map(|p| p.len() + 8).sum();
    let mut out = Vec::with_capacity(total);
    for p in parts {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        out.extend_from_slice(p);
    }
    out
}

fn unpack_parts(mut bytes: &[u8], expected: usize) -> Result<Vec<Vec<u8>>> {
    let mut parts = Vec::with_capacity(expected);
    while !bytes.is_empty() {
        if bytes.len() < 8 {
            return Err(Error::Collective("truncated allgather payload".into()));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + len)
            .ok_or_else(|| Error::Collective("truncated allgather payload".into()))?;
        parts.push(body.to_vec());
        bytes = &bytes[8 + len..];
    }
    if parts.len() != expected {
        return Err(Error::Collective(format!(
            "allgather returned {} parts, expected {expected}",
            parts.len()
        )));
    }
    Ok(parts)
}

pub fn f64s_to_bytes(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * 8);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn bytes_to_f64s(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

static NEXT_LOCAL_GROUP: AtomicU32 = AtomicU32::new(1 << 31);

/// Communicators for a fresh group of `size` workers (ids `0..size`) sharing
/// `transport`.
pub fn local_group(size: usize, transport: Arc<dyn Transport>) -> Vec<Communicator> {
    let gid = NEXT_LOCAL_GROUP.fetch_add(1, Ordering::Relaxed);
    let members: Vec<WorkerId> = (0..size as WorkerId).collect();
    (0..size)
        .map(|r| {
            Communicator::new(
                WorkerGroup::new(gid, members.clone(), r).unwrap(),
                transport.clone(),
            )
        })
        .collect()
}

/// Run `f` once per rank of an in-process group, each on its own thread, and
/// return the results in rank order.
pub fn spmd<T, F>(size: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Communicator) -> T + Sync,
{
    run_group(local_group(size, InProcTransport::new()), f)
}

pub fn run_group<T, F>(comms: Vec<Communicator>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Communicator) -> T + Sync,
{
    thread::scope(|s| {
        let handles: Vec<_> = comms.into_iter().map(|c| s.spawn(|| f(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank panicked"))
            .collect()
    })
}
