//! Binary wire protocol shared by the client SDK, the driver and the workers.
//!
//! Every message is a [`Frame`]: a 14-byte little-endian header followed by
//! `payload_len` payload bytes. Control payloads are back-to-back tagged
//! [`Value`]s; bulk matrix data travels as [`RowBatch`] payloads. The full
//! byte layout is documented in `docs/protocol.md`.

mod batch;
mod frame;
mod value;

pub use batch::{
    decode_row_batch, encode_row_batch, encode_row_batch_into, RowBatch, ROW_BATCH_HEADER_LEN,
};
pub use frame::{
    decode_frame, decode_header, encode_frame, read_frame, write_frame, Command, Frame,
    FrameHeader, FrameReader, Opcode, FRAME_HEADER_LEN, MAGIC, VERSION,
};
pub use value::{
    decode_value, decode_values, encode_value, encode_value_into, encode_values, Value,
};

use crate::error::Error;

/// Client protocol version carried in the handshake hello.
pub const PROTOCOL_VERSION: i32 = 1;

/// Default byte budget of one SEND_ROWS / FETCH_ROWS batch.
pub const DEFAULT_BATCH_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("incomplete input: {needed} more byte(s) required")]
    Incomplete { needed: usize },
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown command code 0x{0:02x}")]
    UnknownCommand(u8),
    #[error("unknown value tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("invalid bool byte 0x{0:02x}")]
    InvalidBool(u8),
    #[error("string is not valid UTF-8")]
    InvalidUtf8,
    #[error("length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("payload of {0} bytes exceeds the u32 length field")]
    PayloadTooLarge(usize),
}

/// Error frame payload: `u16` code followed by a length-prefixed string.
pub fn encode_error_payload(err: &Error) -> Vec<u8> {
    let msg = err.detail();
    let mut out = Vec::with_capacity(6 + msg.len());
    out.extend_from_slice(&(err.code() as u16).to_le_bytes());
    out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
    out.extend_from_slice(msg.as_bytes());
    out
}

pub fn decode_error_payload(bytes: &[u8]) -> Result<Error, CodecError> {
    if bytes.len() < 6 {
        return Err(CodecError::Incomplete {
            needed: 6 - bytes.len(),
        });
    }
    let code = u16::from_le_bytes([bytes[0], bytes[1]]);
    let len = u32::from_le_bytes(bytes[2..6].try_into().unwrap()) as usize;
    let body = &bytes[6..];
    if body.len() < len {
        return Err(CodecError::Incomplete {
            needed: len - body.len(),
        });
    }
    if body.len() > len {
        return Err(CodecError::LengthMismatch {
            expected: len as u64,
            actual: body.len() as u64,
        });
    }
    let msg = std::str::from_utf8(body).map_err(|_| CodecError::InvalidUtf8)?;
    Ok(Error::from_wire(code, msg.to_owned()))
}

/// Request payload for FETCH_ROWS on a worker data connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchRequest {
    pub matrix_id: u32,
    pub start_row: u64,
    pub num_rows: u64,
    /// Upper bound on rows per response batch; at least 1.
    pub batch_rows: u32,
}

impl FetchRequest {
    pub const LEN: usize = 24;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.matrix_id.to_le_bytes());
        out.extend_from_slice(&self.start_row.to_le_bytes());
        out.extend_from_slice(&self.num_rows.to_le_bytes());
        out.extend_from_slice(&self.batch_rows.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<FetchRequest, CodecError> {
        if bytes.len() != Self::LEN {
            return Err(CodecError::LengthMismatch {
                expected: Self::LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        Ok(FetchRequest {
            matrix_id: u32::from_le_bytes(bytes[0..4].try_into().unwrap()),
            start_row: u64::from_le_bytes(bytes[4..12].try_into().unwrap()),
            num_rows: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
            batch_rows: u32::from_le_bytes(bytes[20..24].try_into().unwrap()),
        })
    }
}

/// Payload prefix of group-internal collective frames (opcode 0x40): source
/// and destination worker ids, followed by the opaque message body.
pub fn encode_collective_payload(from: u32, to: u32, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&from.to_le_bytes());
    out.extend_from_slice(&to.to_le_bytes());
    out.extend_from_slice(body);
    out
}

pub fn decode_collective_payload(mut payload: Vec<u8>) -> Result<(u32, u32, Vec<u8>), CodecError> {
    if payload.len() < 8 {
        return Err(CodecError::Incomplete {
            needed: 8 - payload.len(),
        });
    }
    let from = u32::from_le_bytes(payload[0..4].try_into().unwrap());
    let to = u32::from_le_bytes(payload[4..8].try_into().unwrap());
    payload.drain(..8);
    Ok((from, to, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorCode;

    #[test]
    fn error_payload_round_trip() {
        let err = Error::UnknownLibrary("libB".into());
        let bytes = encode_error_payload(&err);
        assert_eq!(
            &bytes[..2],
            &(ErrorCode::UnknownLibrary as u16).to_le_bytes()
        );
        let back = decode_error_payload(&bytes).unwrap();
        assert_eq!(back.code(), ErrorCode::UnknownLibrary);
        assert_eq!(back.detail(), "libB");
    }

    #[test]
    fn fetch_request_round_trip() {
        let req = FetchRequest {
            matrix_id: 9,
            start_row: 1 << 40,
            num_rows: 77,
            batch_rows: 3,
        };
        assert_eq!(FetchRequest::decode(&req.encode()).unwrap(), req);
        assert!(FetchRequest::decode(&[0; 5]).is_err());
    }

    #[test]
    fn collective_payload_round_trip() {
        let p = encode_collective_payload(2, 7, b"abc");
        assert_eq!(
            decode_collective_payload(p).unwrap(),
            (2, 7, b"abc".to_vec())
        );
    }
}
