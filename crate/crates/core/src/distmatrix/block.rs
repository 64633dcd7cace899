use std::ops::Range;

use crate::error::{Error, Result};
use crate::protocol::RowBatch;

/// One worker's share of a block-row distributed matrix.
#[derive(Debug, Clone)]
pub struct LocalBlock {
    row_range: Range<u64>,
    cols: u64,
    data: Vec<f64>,
    filled: Vec<bool>,
    filled_count: usize,
    duplicate_writes: u64,
}

impl LocalBlock {
    /// Empty block awaiting ingest.
    pub fn new(row_range: Range<u64>, cols: u64) -> Self {
        let rows = (row_range.end - row_range.start) as usize;
        Self {
            row_range,
            cols,
            data: vec![0.0; rows * cols as usize],
            filled: vec![false; rows],
            filled_count: 0,
            duplicate_writes: 0,
        }
    }

    /// Already-complete block, e.g. a routine output.
    pub fn from_data(row_range: Range<u64>, cols: u64, data: Vec<f64>) -> Result<Self> {
        let rows = (row_range.end - row_range.start) as usize;
        if data.len() != rows * cols as usize {
            return Err(Error::Internal(format!(
                "block data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self {
            row_range,
            cols,
            data,
            filled: vec![true; rows],
            filled_count: rows,
            duplicate_writes: 0,
        })
    }

    pub fn row_range(&self) -> Range<u64> {
        self.row_range.clone()
    }

    pub fn local_rows(&self) -> usize {
        self.filled.len()
    }

    pub fn cols(&self) -> u64 {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row by local index.
    pub fn row(&self, local: usize) -> &[f64] {
        let n = self.cols as usize;
        &self.data[local * n..(local + 1) * n]
    }

    pub fn is_complete(&self) -> bool {
        self.filled_count == self.filled.len()
    }

    pub fn duplicate_writes(&self) -> u64 {
        self.duplicate_writes
    }

    pub fn size_bytes(&self) -> u64 {
        (self.data.len() * 8) as u64
    }

    /// Global row ranges not yet written, merged into maximal runs.
    pub fn missing_ranges(&self) -> Vec<Range<u64>> {
        let mut out: Vec<Range<u64>> = Vec::new();
        for (i, f) in self.filled.iter().enumerate() {
            if *f {
                continue;
            }
            let g = self.row_range.start + i as u64;
            match out.last_mut() {
                Some(r) if r.end == g => r.end = g + 1,
                _ => out.push(g..g + 1),
            }
        }
        out
    }

    pub fn write_rows(&mut self, batch: &RowBatch) -> Result<()> {
        if batch.num_cols != self.cols {
            return Err(Error::Argument(format!(
                "batch has {} columns, matrix {} has {}",
                batch.num_cols, batch.matrix_id, self.cols
            )));
        }
        let rows = batch.row_range();
        if rows.start < self.row_range.start || rows.end > self.row_range.end {
            return Err(Error::Routing(format!(
                "rows {}..{} of matrix {} sent to the owner of {}..{}",
                rows.start, rows.end, batch.matrix_id, self.row_range.start, self.row_range.end
            )));
        }
        let n = self.cols as usize;
        let local0 = (rows.start - self.row_range.start) as usize;
        self.data[local0 * n..local0 * n + batch.data.len()].copy_from_slice(&batch.data);
        for f in &mut self.filled[local0..local0 + batch.num_rows as usize] {
            if *f {
                self.duplicate_writes += 1;
            } else {
                *f = true;
                self.filled_count += 1;
            }
        }
        Ok(())
    }

    pub fn read_rows(&self, matrix_id: u32, range: Range<u64>) -> Result<RowBatch> {
        if !self.is_complete() {
            return Err(Error::NotReady(format!(
                "matrix {matrix_id} is still missing rows {:?}",
                self.missing_ranges()
            )));
        }
        if range.start > range.end
            || range.start < self.row_range.start
            || range.end > self.row_range.end
        {
            return Err(Error::OutOfRange(format!(
                "rows {}..{} not owned here ({}..{})",
                range.start, range.end, self.row_range.start, self.row_range.end
            )));
        }
        let n = self.cols as usize;
        let a = (range.start - self.row_range.start) as usize;
        let b = (range.end - self.row_range.start) as usize;
        Ok(RowBatch {
            matrix_id,
            start_row: range.start,
            num_rows: u32::try_from(b - a)
                .map_err(|_| Error::TooLarge("row batch exceeds u32 rows".into()))?,
            num_cols: self.cols,
            data: self.data[a * n..b * n].to_vec(),
        })
    }
}
