use std::io::{self, Read, Write};

use super::CodecError;
use crate::error::{Error, Result};

/// "ALCH" read as a little-endian u32.
pub const MAGIC: u32 = 0x414C_4348;
pub const VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 14;

/// Request opcodes. Responses carry `opcode | 0x80`; `0xFF` is the error frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Handshake = 0x01,
    RequestWorkers = 0x02,
    RegisterLibrary = 0x03,
    CreateMatrix = 0x04,
    SendRows = 0x05,
    FetchRows = 0x06,
    Run = 0x07,
    Close = 0x08,
    /// Worker-to-worker collective traffic.
    Collective = 0x40,
}

impl Opcode {
    pub fn from_u8(code: u8) -> Option<Opcode> {
        Some(match code {
            0x01 => Opcode::Handshake,
            0x02 => Opcode::RequestWorkers,
            0x03 => Opcode::RegisterLibrary,
            0x04 => Opcode::CreateMatrix,
            0x05 => Opcode::SendRows,
            0x06 => Opcode::FetchRows,
            0x07 => Opcode::Run,
            0x08 => Opcode::Close,
            0x40 => Opcode::Collective,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Request(Opcode),
    Response(Opcode),
    Error,
}

impl Command {
    pub const ERROR_CODE: u8 = 0xFF;

    pub fn code(self) -> u8 {
        match self {
            Command::Request(op) => op as u8,
            Command::Response(op) => op as u8 | 0x80,
            Command::Error => Self::ERROR_CODE,
        }
    }

    pub fn from_code(code: u8) -> Result<Command, CodecError> {
        if code == Self::ERROR_CODE {
            return Ok(Command::Error);
        }
        let op = Opcode::from_u8(code & 0x7F).ok_or(CodecError::UnknownCommand(code))?;
        Ok(if code & 0x80 != 0 {
            Command::Response(op)
        } else {
            Command::Request(op)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub command: Command,
    pub session_id: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(command: Command, session_id: u32, payload: Vec<u8>) -> Frame {
        Frame {
            command,
            session_id,
            payload,
        }
    }

    /// Total bytes this frame occupies on the wire.
    pub fn wire_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub command: Command,
    pub session_id: u32,
    pub payload_len: u32,
}

fn header_bytes(command: Command, session_id: u32, payload_len: u32) -> [u8; FRAME_HEADER_LEN] {
    let mut h = [0u8; FRAME_HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC.to_le_bytes());
    h[4] = VERSION;
    h[5] = command.code();
    h[6..10].copy_from_slice(&session_id.to_le_bytes());
    h[10..14].copy_from_slice(&payload_len.to_le_bytes());
    h
}

pub fn encode_frame(
    command: Command,
    session_id: u32,
    payload: &[u8],
) -> Result<Vec<u8>, CodecError> {
    let len =
        u32::try_from(payload.len()).map_err(|_| CodecError::PayloadTooLarge(payload.len()))?;
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&header_bytes(command, session_id, len));
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode_header(bytes: &[u8]) -> Result<FrameHeader, CodecError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(CodecError::Incomplete {
            needed: FRAME_HEADER_LEN - bytes.len(),
        });
    }
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(CodecError::UnsupportedVersion(bytes[4]));
    }
    let command = Command::from_code(bytes[5])?;
    Ok(FrameHeader {
        command,
        session_id: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
        payload_len: u32::from_le_bytes(bytes[10..14].try_into().unwrap()),
    })
}

/// Parse one frame from the front of `bytes`, returning it together with the
/// number of bytes it occupied. Nothing is consumed on error; a short buffer
/// yields [`CodecError::Incomplete`].
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), CodecError> {
    let header = decode_header(bytes)?;
    let total = FRAME_HEADER_LEN + header.payload_len as usize;
    if bytes.len() < total {
        return Err(CodecError::Incomplete {
            needed: total - bytes.len(),
        });
    }
    let frame = Frame::new(
        header.command,
        header.session_id,
        bytes[FRAME_HEADER_LEN..total].to_vec(),
    );
    Ok((frame, total))
}

/// Incremental frame parser for byte streams that arrive in arbitrary pieces.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, or `None` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, CodecError> {
        match decode_frame(&self.buf) {
            Ok((frame, used)) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            Err(CodecError::Incomplete { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

pub fn write_frame<W: Write + ?Sized>(
    w: &mut W,
    command: Command,
    session_id: u32,
    payload: &[u8],
) -> Result<usize> {
    let len =
        u32::try_from(payload.len()).map_err(|_| CodecError::PayloadTooLarge(payload.len()))?;
    w.write_all(&header_bytes(command, session_id, len))?;
    w.write_all(payload)?;
    Ok(FRAME_HEADER_LEN + payload.len())
}

/// Blocking read of one frame. `Ok(None)` on a clean end-of-stream at a frame
/// boundary.
pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Frame>> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < FRAME_HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(Error::Io(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "truncated frame header",
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let h = decode_header(&header)?;
    let mut payload = vec![0u8; h.payload_len as usize];
    r.read_exact(&mut payload)?;
    Ok(Some(Frame::new(h.command, h.session_id, payload)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn close_frame_header_bytes() {
        let bytes = encode_frame(Command::Request(Opcode::Close), 0, &[]).unwrap();
        assert_eq!(
            bytes,
            [0x48, 0x43, 0x4C, 0x41, 0x01, 0x08, 0, 0, 0, 0, 0, 0, 0, 0]
        );
        let (frame, used) = decode_frame(&bytes).unwrap();
        assert_eq!(used, 14);
        assert_eq!(
            frame,
            Frame::new(Command::Request(Opcode::Close), 0, vec![])
        );
    }

    #[test]
    fn handshake_payload_len_field() {
        let bytes = encode_frame(Command::Request(Opcode::Handshake), 0, &[9, 8, 7]).unwrap();
        assert_eq!(&bytes[10..14], &[3, 0, 0, 0]);
        assert_eq!(&bytes[14..], &[9, 8, 7]);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_frame(Command::Request(Opcode::Close), 0, &[]).unwrap();
        bytes[0..4].copy_from_slice(&[0, 0, 0, 0]);
        assert_eq!(decode_frame(&bytes), Err(CodecError::BadMagic(0)));
    }

    #[test]
    fn unknown_version_rejected() {
        let mut bytes = encode_frame(Command::Request(Opcode::Close), 0, &[]).unwrap();
        bytes[4] = 2;
        assert_eq!(decode_frame(&bytes), Err(CodecError::UnsupportedVersion(2)));
    }

    #[test]
    fn truncated_payload_is_incomplete() {
        let mut bytes = encode_frame(Command::Request(Opcode::Run), 1, &[0; 10]).unwrap();
        bytes.truncate(FRAME_HEADER_LEN + 4);
        assert_eq!(
            decode_frame(&bytes),
            Err(CodecError::Incomplete { needed: 6 })
        );
        assert_eq!(
            decode_frame(&bytes[..5]),
            Err(CodecError::Incomplete { needed: 9 })
        );
    }

    #[test]
    fn command_codes() {
        assert_eq!(Command::Response(Opcode::Run).code(), 0x87);
        assert_eq!(
            Command::from_code(0x87).unwrap(),
            Command::Response(Opcode::Run)
        );
        assert_eq!(Command::from_code(0xFF).unwrap(), Command::Error);
        assert_eq!(
            Command::from_code(0xC0).unwrap(),
            Command::Response(Opcode::Collective)
        );
        assert_eq!(
            Command::from_code(0x09),
            Err(CodecError::UnknownCommand(0x09))
        );
        assert_eq!(
            Command::from_code(0x00),
            Err(CodecError::UnknownCommand(0x00))
        );
    }

    #[test]
    fn stream_read_write() {
        let mut buf = Vec::new();
        write_frame(&mut buf, Command::Request(Opcode::Run), 5, b"hello").unwrap();
        write_frame(&mut buf, Command::Error, 5, b"").unwrap();
        let mut cur = std::io::Cursor::new(buf);
        let a = read_frame(&mut cur).unwrap().unwrap();
        assert_eq!(a.payload, b"hello");
        let b = read_frame(&mut cur).unwrap().unwrap();
        assert_eq!(b.command, Command::Error);
        assert!(read_frame(&mut cur).unwrap().is_none());
    }
}
