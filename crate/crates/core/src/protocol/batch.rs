use super::CodecError;

/// u32 matrix id + u64 start row + u32 row count + u64 column count.
pub const ROW_BATCH_HEADER_LEN: usize = 24;

/// A run of globally contiguous rows of one matrix, row-major f64.
#[derive(Debug, Clone)]
pub struct RowBatch {
    pub matrix_id: u32,
    pub start_row: u64,
    pub num_rows: u32,
    pub num_cols: u64,
    pub data: Vec<f64>,
}

impl PartialEq for RowBatch {
    fn eq(&self, other: &Self) -> bool {
        self.matrix_id == other.matrix_id
            && self.start_row == other.start_row
            && self.num_rows == other.num_rows
            && self.num_cols == other.num_cols
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl RowBatch {
    pub fn row_range(&self) -> std::ops::Range<u64> {
        self.start_row..self.start_row + self.num_rows as u64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.num_cols as usize;
        &self.data[i * n..(i + 1) * n]
    }
}

fn expected_len(num_rows: u32, num_cols: u64) -> Option<u64> {
    (num_rows as u64).checked_mul(num_cols)
}

/// Append an encoded batch to `out` without building a [`RowBatch`].
pub fn encode_row_batch_into(
    out: &mut Vec<u8>,
    matrix_id: u32,
    start_row: u64,
    num_rows: u32,
    num_cols: u64,
    data: &[f64],
) -> Result<(), CodecError> {
    let expected = expected_len(num_rows, num_cols).ok_or(CodecError::LengthMismatch {
        expected: u64::MAX,
        actual: data.len() as u64,
    })?;
    if expected != data.len() as u64 {
        return Err(CodecError::LengthMismatch {
            expected,
            actual: data.len() as u64,
        });
    }
    out.reserve(ROW_BATCH_HEADER_LEN + data.len() * 8);
    out.extend_from_slice(&matrix_id.to_le_bytes());
    out.extend_from_slice(&start_row.to_le_bytes());
    out.extend_from_slice(&num_rows.to_le_bytes());
    out.extend_from_slice(&num_cols.to_le_bytes());
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

pub fn encode_row_batch(batch: &RowBatch) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    encode_row_batch_into(
        &mut out,
        batch.matrix_id,
        batch.start_row,
        batch.num_rows,
        batch.num_cols,
        &batch.data,
    )?;
    Ok(out)
}

/// Decode a complete SEND_ROWS / FETCH_ROWS payload. The byte length must
/// agree exactly with the declared shape.
pub fn decode_row_batch(bytes: &[u8]) -> Result<RowBatch, CodecError> {
    if bytes.len() < ROW_BATCH_HEADER_LEN {
        return Err(CodecError::LengthMismatch {
            expected: ROW_BATCH_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let matrix_id = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let start_row = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let num_rows = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let num_cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let body = &bytes[ROW_BATCH_HEADER_LEN..];
    let expected = expected_len(num_rows, num_cols).and_then(|c| c.checked_mul(8));
    if expected != Some(body.len() as u64) {
        return Err(CodecError::LengthMismatch {
            expected: expected.unwrap_or(u64::MAX),
            actual: body.len() as u64,
        });
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RowBatch {
        matrix_id,
        start_row,
        num_rows,
        num_cols,
        data,
    })
}
