use crate::comm::WorkerId;
use crate::error::{Error, Result};

/// Exclusive assignment of pool workers to sessions.
#[derive(Debug, Clone)]
pub struct WorkerPool {
    owner: Vec<Option<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolStatus {
    pub size: usize,
    pub free: usize,
    pub assigned: usize,
}

impl WorkerPool {
    pub fn new(size: usize) -> Self {
        Self {
            owner: vec![None; size],
        }
    }

    pub fn size(&self) -> usize {
        self.owner.len()
    }

    pub fn free_count(&self) -> usize {
        self.owner.iter().filter(|o| o.is_none()).count()
    }

    pub fn status(&self) -> PoolStatus {
        let free = self.free_count();
        PoolStatus {
            size: self.size(),
            free,
            assigned: self.size() - free,
        }
    }

    /// Reserve the `n` lowest-numbered free workers for `session`. All or
    /// nothing: on failure the pool is unchanged.
    pub fn allocate(&mut self, session: u32, n: usize) -> Result<Vec<WorkerId>> {
        if n == 0 {
            return Err(Error::Argument("must request at least one worker".into()));
        }
        let free: Vec<usize> = (0..self.owner.len())
            .filter(|&w| self.owner[w].is_none())
            .take(n)
            .collect();
        if free.len() < n {
            return Err(Error::InsufficientWorkers(format!(
                "requested {n} workers, {} of {} free",
                self.free_count(),
                self.size()
            )));
        }
        for &w in &free {
            self.owner[w] = Some(session);
        }
        Ok(free.into_iter().map(|w| w as WorkerId).collect())
    }

    /// Return every worker held by `session` to the free pool.
    pub fn release(&mut self, session: u32) -> Vec<WorkerId> {
        let mut out = Vec::new();
        for (w, o) in self.owner.iter_mut().enumerate() {
            if *o == Some(session) {
                *o = None;
                out.push(w as WorkerId);
            }
        }
        out
    }

    pub fn owner(&self, worker: WorkerId) -> Option<u32> {
        self.owner.get(worker as usize).copied().flatten()
    }
}
