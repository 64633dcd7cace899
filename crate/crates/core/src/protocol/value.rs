use std::fmt;

use super::CodecError;
use crate::distmatrix::MatrixHandle;

const TAG_BOOL: u8 = 0x01;
const TAG_I32: u8 = 0x02;
const TAG_I64: u8 = 0x03;
const TAG_F64: u8 = 0x04;
const TAG_STR: u8 = 0x05;
const TAG_MATRIX: u8 = 0x06;

/// Tagged routine parameter. Control payloads are sequences of these packed
/// back to back.
#[derive(Clone)]
pub enum Value {
    Bool(bool),
    I32(i32),
    I64(i64),
    F64(f64),
    Str(String),
    Matrix(MatrixHandle),
}

// f64 compares by bit pattern so that NaN payloads and signed zeros survive
// a round trip as "equal".
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::I32(a), Value::I32(b)) => a == b,
            (Value::I64(a), Value::I64(b)) => a == b,
            (Value::F64(a), Value::F64(b)) => a.to_bits() == b.to_bits(),
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Matrix(a), Value::Matrix(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(v) => write!(f, "Bool({v})"),
            Value::I32(v) => write!(f, "I32({v})"),
            Value::I64(v) => write!(f, "I64({v})"),
            Value::F64(v) => write!(f, "F64({v:?})"),
            Value::Str(v) => write!(f, "Str({v:?})"),
            Value::Matrix(h) => write!(f, "Matrix(#{} {}x{})", h.id, h.rows, h.cols),
        }
    }
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::I32(_) => "i32",
            Value::I64(_) => "i64",
            Value::F64(_) => "f64",
            Value::Str(_) => "string",
            Value::Matrix(_) => "matrix",
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Integer view accepting either width.
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::I32(v) => Some(*v as i64),
            Value::I64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::F64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<MatrixHandle> {
        match self {
            Value::Matrix(h) => Some(*h),
            _ => None,
        }
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}
impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::I32(v)
    }
}
impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::I64(v)
    }
}
impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::F64(v)
    }
}
impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}
impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}
impl From<MatrixHandle> for Value {
    fn from(v: MatrixHandle) -> Self {
        Value::Matrix(v)
    }
}
impl From<&MatrixHandle> for Value {
    fn from(v: &MatrixHandle) -> Self {
        Value::Matrix(*v)
    }
}

pub fn encode_value_into(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Bool(b) => out.extend_from_slice(&[TAG_BOOL, *b as u8]),
        Value::I32(x) => {
            out.push(TAG_I32);
            out.extend_from_slice(&x.to_le_bytes());
        }
        Value::I64(x) => {
            out.push(TAG_I64);
            out.extend_from_slice(&x.to_le_bytes());
        }
        Value::F64(x) => {
            out.push(TAG_F64);
            out.extend_from_slice(&x.to_le_bytes());
        }
        Value::Str(s) => {
            out.push(TAG_STR);
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        Value::Matrix(h) => {
            out.push(TAG_MATRIX);
            out.extend_from_slice(&h.id.to_le_bytes());
            out.extend_from_slice(&h.rows.to_le_bytes());
            out.extend_from_slice(&h.cols.to_le_bytes());
        }
    }
}

pub fn encode_value(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    encode_value_into(&mut out, v);
    out
}

fn take<const N: usize>(bytes: &[u8], at: usize) -> Result<[u8; N], CodecError> {
    match bytes.get(at..at + N) {
        Some(s) => Ok(s.try_into().unwrap()),
        None => Err(CodecError::Incomplete {
            needed: at + N - bytes.len(),
        }),
    }
}

/// Decode one value from the front of `bytes`, returning it and the number of
/// bytes consumed.
pub fn decode_value(bytes: &[u8]) -> Result<(Value, usize), CodecError> {
    let tag = *bytes.first().ok_or(CodecError::Incomplete { needed: 1 })?;
    match tag {
        TAG_BOOL => match take::<1>(bytes, 1)?[0] {
            0 => Ok((Value::Bool(false), 2)),
            1 => Ok((Value::Bool(true), 2)),
            b => Err(CodecError::InvalidBool(b)),
        },
        TAG_I32 => Ok((Value::I32(i32::from_le_bytes(take(bytes, 1)?)), 5)),
        TAG_I64 => Ok((Value::I64(i64::from_le_bytes(take(bytes, 1)?)), 9)),
        TAG_F64 => Ok((Value::F64(f64::from_le_bytes(take(bytes, 1)?)), 9)),
        TAG_STR => {
            let len = u32::from_le_bytes(take(bytes, 1)?) as usize;
            let end = 5 + len;
            if bytes.len() < end {
                return Err(CodecError::Incomplete {
                    needed: end - bytes.len(),
                });
            }
            let s = std::str::from_utf8(&bytes[5..end]).map_err(|_| CodecError::InvalidUtf8)?;
            Ok((Value::Str(s.to_owned()), end))
        }
        TAG_MATRIX => {
            let id = u32::from_le_bytes(take(bytes, 1)?);
            let rows = u64::from_le_bytes(take(bytes, 5)?);
            let cols = u64::from_le_bytes(take(bytes, 13)?);
            Ok((Value::Matrix(MatrixHandle { id, rows, cols }), 21))
        }
        other => Err(CodecError::UnknownTag(other)),
    }
}

pub fn encode_values(values: &[Value]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        encode_value_into(&mut out, v);
    }
    out
}

/// Decode a whole payload of packed values; every byte must be consumed.
pub fn decode_values(mut bytes: &[u8]) -> Result<Vec<Value>, CodecError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (v, used) = decode_value(bytes)?;
        out.push(v);
        bytes = &bytes[used..];
    }
    Ok(out)
}
