use std::ops::Range;

use crate::error::{Error, Result};

/// Client-side proxy for a server-resident distributed matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatrixHandle {
    pub id: u32,
    pub rows: u64,
    pub cols: u64,
}

impl MatrixHandle {
    pub fn new(id: u32, rows: u64, cols: u64) -> Self {
        Self { id, rows, cols }
    }

    pub fn dims(&self) -> (u64, u64) {
        (self.rows, self.cols)
    }

    pub fn size_bytes(&self) -> u64 {
        self.rows * self.cols * 8
    }
}

/// Block-row boundaries: `boundaries[r] = floor(r * m / p)`.
pub fn partition(m: u64, p: usize) -> Result<Vec<u64>> {
    if p == 0 {
        return Err(Error::Argument("worker count must be at least 1".into()));
    }
    if m == 0 {
        return Err(Error::Argument("row count must be at least 1".into()));
    }
    Ok((0..=p as u128)
        .map(|r| (r * m as u128 / p as u128) as u64)
        .collect())
}

/// Which rank of a `p`-way block-row layout owns each global row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutDescriptor {
    rows: u64,
    cols: u64,
    boundaries: Vec<u64>,
}

impl LayoutDescriptor {
    pub fn new(rows: u64, cols: u64, workers: usize) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Argument("column count must be at least 1".into()));
        }
        Ok(Self {
            rows,
            cols,
            boundaries: partition(rows, workers)?,
        })
    }

    /// Rebuild from boundaries announced by the server, validating them.
    pub fn from_boundaries(rows: u64, cols: u64, boundaries: Vec<u64>) -> Result<Self> {
        let ok = boundaries.len() >= 2
            && boundaries[0] == 0
            && *boundaries.last().unwrap() == rows
            && boundaries.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(Error::Protocol(format!(
                "invalid layout boundaries {boundaries:?} for {rows} rows"
            )));
        }
        Ok(Self {
            rows,
            cols,
            boundaries,
        })
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn cols(&self) -> u64 {
        self.cols
    }

    pub fn workers(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[u64] {
        &self.boundaries
    }

    pub fn owned_range(&self, rank: usize) -> Range<u64> {
        self.boundaries[rank]..self.boundaries[rank + 1]
    }

    pub fn owned_rows(&self, rank: usize) -> usize {
        (self.boundaries[rank + 1] - self.boundaries[rank]) as usize
    }

    pub fn owner_of_row(&self, row: u64) -> Result<usize> {
        if row >= self.rows {
            return Err(Error::OutOfRange(format!(
                "row {row} outside matrix of {} rows",
                self.rows
            )));
        }
        Ok(self.boundaries[1..].partition_point(|&b| b <= row))
    }
}
