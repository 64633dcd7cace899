use std::ops::Range;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::rng::uniform_row;

/// Rows of a matrix held by one client process (one partition of a
/// data-parallel collection). Indices are global row numbers.
pub trait RowSource: Sync {
    fn cols(&self) -> u64;

    /// Number of rows this source yields.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global row indices, strictly increasing.
    fn row_indices(&self) -> Box<dyn Iterator<Item = u64> + '_>;

    /// Write row `index` (one of `row_indices`) into `out`, which has
    /// `cols()` entries.
    fn fill_row(&self, index: u64, out: &mut [f64]) -> Result<()>;
}

/// An owned set of `(global index, row)` pairs.
#[derive(Debug, Clone)]
pub struct LocalRowPartition {
    cols: u64,
    indices: Vec<u64>,
    data: Vec<f64>,
}

impl LocalRowPartition {
    /// Rows may arrive in any order; each must have `cols` entries and each
    /// index may appear once.
    pub fn new(cols: u64, mut rows: Vec<(u64, Vec<f64>)>) -> Result<Self> {
        rows.sort_by_key(|(i, _)| *i);
        let mut indices = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * cols as usize);
        for (i, row) in rows {
            if row.len() as u64 != cols {
                return Err(Error::Argument(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            if indices.last() == Some(&i) {
                return Err(Error::Argument(format!(
                    "row {i} appears twice in one partition"
                )));
            }
            indices.push(i);
            data.extend(row);
        }
        Ok(Self {
            cols,
            indices,
            data,
        })
    }

    /// Rows `range` of a local dense matrix.
    pub fn from_dense(m: &DenseMatrix, range: Range<usize>) -> Self {
        let n = m.cols();
        Self {
            cols: n as u64,
            indices: range.clone().map(|i| i as u64).collect(),
            data: m.data()[range.start * n..range.end * n].to_vec(),
        }
    }
}

impl RowSource for LocalRowPartition {
    fn cols(&self) -> u64 {
        self.cols
    }

    fn len(&self) -> usize {
        self.indices.len()
    }

    fn row_indices(&self) -> Box<dyn Iterator<Item = u64> + '_> {
        Box::new(self.indices.iter().copied())
    }

    fn fill_row(&self, index: u64, out: &mut [f64]) -> Result<()> {
        let pos = self
            .indices
            .binary_search(&index)
            .map_err(|_| Error::Argument(format!("row {index} is not in this partition")))?;
        let n = self.cols as usize;
        out.copy_from_slice(&self.data[pos * n..(pos + 1) * n]);
        Ok(())
    }
}

/// A borrowed contiguous row range of a dense matrix.
pub struct DenseRows<'m> {
    matrix: &'m DenseMatrix,
    rows: Range<usize>,
}

impl<'m> DenseRows<'m> {
    pub fn new(matrix: &'m DenseMatrix, rows: Range<usize>) -> Self {
        assert!(
            rows.end <= matrix.rows(),
            "row range {rows:?} exceeds {} rows",
            matrix.rows()
        );
        Self { matrix, rows }
    }

    pub fn all(matrix: &'m DenseMatrix) -> Self {
        Self::new(matrix, 0..matrix.rows())
    }
}

impl RowSource for DenseRows<'_> {
    fn cols(&self) -> u64 {
        self.matrix.cols() as u64
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn row_indices(&self) -> Box<dyn Iterator<Item = u64> + '_> {
        Box::new(self.rows.clone().map(|i| i as u64))
    }

    fn fill_row(&self, index: u64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(self.matrix.row(index as usize));
        Ok(())
    }
}

/// Rows of the uniform `[0, 1)` matrix keyed by `seed`, generated on demand
/// so a client can stream matrices larger than its memory.
#[derive(Debug, Clone)]
pub struct UniformRows {
    pub seed: u64,
    pub cols: u64,
    pub rows: Range<u64>,
}

impl RowSource for UniformRows {
    fn cols(&self) -> u64 {
        self.cols
    }

    fn len(&self) -> usize {
        (self.rows.end - self.rows.start) as usize
    }

    fn row_indices(&self) -> Box<dyn Iterator<Item = u64> + '_> {
        Box::new(self.rows.clone())
    }

    fn fill_row(&self, index: u64, out: &mut [f64]) -> Result<()> {
        uniform_row(self.seed, index, out);
        Ok(())
    }
}

/// Split `0..rows` into `parts` contiguous ranges of near-equal size.
pub fn split_rows(rows: u64, parts: usize) -> Vec<Range<u64>> {
    let parts = parts.max(1) as u128;
    (0..parts)
        .map(|c| ((c * rows as u128 / parts) as u64)..(((c + 1) * rows as u128 / parts) as u64))
        .collect()
}
