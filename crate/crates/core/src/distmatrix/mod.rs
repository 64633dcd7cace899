//! Block-row distributed dense matrices.
//!
//! Worker rank `r` of a `p`-way group owns global rows
//! `[floor(r*m/p), floor((r+1)*m/p))`. Client and server compute the same
//! boundaries independently, so row batches can be routed without a lookup
//! service.

mod block;
mod layout;

pub use block::LocalBlock;
pub use layout::{partition, LayoutDescriptor, MatrixHandle};

use crate::comm::{bytes_to_f64s, f64s_to_bytes, Communicator};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Default cap on the size of a gathered dense copy.
pub const DEFAULT_GATHER_GUARD_BYTES: u64 = 2 << 30;

/// Collective: concatenate every rank's block, in rank order, at `root`.
/// Non-root ranks return `Ok(None)`.
pub fn gather_to_dense(
    comm: &Communicator,
    block: &LocalBlock,
    rows: u64,
    cols: u64,
    root: usize,
    guard_bytes: u64,
) -> Result<Option<DenseMatrix>> {
    let bytes = rows.saturating_mul(cols).saturating_mul(8);
    if bytes > guard_bytes {
        return Err(Error::TooLarge(format!(
            "gathering a {rows}x{cols} matrix needs {bytes} bytes, guard is {guard_bytes}"
        )));
    }
    let mut msg = vec![block.is_complete() as u8];
    msg.extend_from_slice(&f64s_to_bytes(block.data()));
    let Some(parts) = comm.gather(root, &msg)? else {
        return Ok(None);
    };
    let mut data = Vec::with_capacity((rows * cols) as usize);
    for (r, part) in parts.iter().enumerate() {
        if part.first() != Some(&1) {
            return Err(Error::NotReady(format!(
                "rank {r} holds an incomplete block"
            )));
        }
        data.extend(bytes_to_f64s(&part[1..]));
    }
    if data.len() as u64 != rows * cols {
        return Err(Error::Internal(format!(
            "gathered {} entries for a {rows}x{cols} matrix",
            data.len()
        )));
    }
    Ok(Some(DenseMatrix::from_vec(
        rows as usize,
        cols as usize,
        data,
    )))
}
