//! Error taxonomy shared by the server, the client SDK and library plugins.
//!
//! Every error maps to a stable numeric [`ErrorCode`] that travels in the
//! payload of an error frame (`0xFF`). The message string is informational
//! only and may change between releases.

use std::fmt;

use crate::protocol::CodecError;

/// Stable wire codes carried in error frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    Protocol = 1,
    Version = 2,
    ProtocolState = 3,
    Argument = 4,
    InsufficientWorkers = 5,
    UnknownLibrary = 6,
    UnknownRoutine = 7,
    Handle = 8,
    NotReady = 9,
    DimensionMismatch = 10,
    TooLarge = 11,
    Resource = 12,
    Incomplete = 13,
    SessionClosed = 14,
    Routing = 15,
    GroupFailure = 16,
    Collective = 17,
    OutOfRange = 18,
    Connect = 19,
    ContextClosed = 20,
    Routine = 21,
    Io = 22,
    Internal = 23,
}

impl ErrorCode {
    const ALL: [ErrorCode; 23] = [
        ErrorCode::Protocol,
        ErrorCode::Version,
        ErrorCode::ProtocolState,
        ErrorCode::Argument,
        ErrorCode::InsufficientWorkers,
        ErrorCode::UnknownLibrary,
        ErrorCode::UnknownRoutine,
        ErrorCode::Handle,
        ErrorCode::NotReady,
        ErrorCode::DimensionMismatch,
        ErrorCode::TooLarge,
        ErrorCode::Resource,
        ErrorCode::Incomplete,
        ErrorCode::SessionClosed,
        ErrorCode::Routing,
        ErrorCode::GroupFailure,
        ErrorCode::Collective,
        ErrorCode::OutOfRange,
        ErrorCode::Connect,
        ErrorCode::ContextClosed,
        ErrorCode::Routine,
        ErrorCode::Io,
        ErrorCode::Internal,
    ];

    pub fn from_u16(code: u16) -> Option<ErrorCode> {
        Self::ALL.iter().copied().find(|c| *c as u16 == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Protocol => "protocol error",
            ErrorCode::Version => "version error",
            ErrorCode::ProtocolState => "protocol-state error",
            ErrorCode::Argument => "argument error",
            ErrorCode::InsufficientWorkers => "insufficient workers",
            ErrorCode::UnknownLibrary => "unknown library",
            ErrorCode::UnknownRoutine => "unknown routine",
            ErrorCode::Handle => "handle error",
            ErrorCode::NotReady => "not ready",
            ErrorCode::DimensionMismatch => "dimension mismatch",
            ErrorCode::TooLarge => "too large",
            ErrorCode::Resource => "resource error",
            ErrorCode::Incomplete => "completeness timeout",
            ErrorCode::SessionClosed => "session closed",
            ErrorCode::Routing => "routing error",
            ErrorCode::GroupFailure => "group failure",
            ErrorCode::Collective => "collective error",
            ErrorCode::OutOfRange => "out of range",
            ErrorCode::Connect => "connect error",
            ErrorCode::ContextClosed => "context closed",
            ErrorCode::Routine => "routine failure",
            ErrorCode::Io => "i/o error",
            ErrorCode::Internal => "internal error",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("version error: {0}")]
    Version(String),
    #[error("protocol-state error: {0}")]
    ProtocolState(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("insufficient workers: {0}")]
    InsufficientWorkers(String),
    #[error("unknown library: {0}")]
    UnknownLibrary(String),
    #[error("unknown routine: {0}")]
    UnknownRoutine(String),
    #[error("handle error: {0}")]
    Handle(String),
    #[error("not ready: {0}")]
    NotReady(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("too large: {0}")]
    TooLarge(String),
    #[error("resource error: {0}")]
    Resource(String),
    #[error("completeness timeout: {0}")]
    Incomplete(String),
    #[error("session closed: {0}")]
    SessionClosed(String),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("group failure: {0}")]
    GroupFailure(String),
    #[error("collective error: {0}")]
    Collective(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("connect error: {0}")]
    Connect(String),
    #[error("context closed: {0}")]
    ContextClosed(String),
    #[error("routine failure: {0}")]
    Routine(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Protocol(_) => ErrorCode::Protocol,
            Error::Version(_) => ErrorCode::Version,
            Error::ProtocolState(_) => ErrorCode::ProtocolState,
            Error::Argument(_) => ErrorCode::Argument,
            Error::InsufficientWorkers(_) => ErrorCode::InsufficientWorkers,
            Error::UnknownLibrary(_) => ErrorCode::UnknownLibrary,
            Error::UnknownRoutine(_) => ErrorCode::UnknownRoutine,
            Error::Handle(_) => ErrorCode::Handle,
            Error::NotReady(_) => ErrorCode::NotReady,
            Error::DimensionMismatch(_) => ErrorCode::DimensionMismatch,
            Error::TooLarge(_) => ErrorCode::TooLarge,
            Error::Resource(_) => ErrorCode::Resource,
            Error::Incomplete(_) => ErrorCode::Incomplete,
            Error::SessionClosed(_) => ErrorCode::SessionClosed,
            Error::Routing(_) => ErrorCode::Routing,
            Error::GroupFailure(_) => ErrorCode::GroupFailure,
            Error::Collective(_) => ErrorCode::Collective,
            Error::OutOfRange(_) => ErrorCode::OutOfRange,
            Error::Connect(_) => ErrorCode::Connect,
            Error::ContextClosed(_) => ErrorCode::ContextClosed,
            Error::Routine(_) => ErrorCode::Routine,
            Error::Io(_) => ErrorCode::Io,
            Error::Internal(_) => ErrorCode::Internal,
        }
    }

    /// The detail string without the category prefix; this is what goes on
    /// the wire next to the code.
    pub fn detail(&self) -> String {
        match self {
            Error::Protocol(s)
            | Error::Version(s)
            | Error::ProtocolState(s)
            | Error::Argument(s)
            | Error::InsufficientWorkers(s)
            | Error::UnknownLibrary(s)
            | Error::UnknownRoutine(s)
            | Error::Handle(s)
            | Error::NotReady(s)
            | Error::DimensionMismatch(s)
            | Error::TooLarge(s)
            | Error::Resource(s)
            | Error::Incomplete(s)
            | Error::SessionClosed(s)
            | Error::Routing(s)
            | Error::GroupFailure(s)
            | Error::Collective(s)
            | Error::OutOfRange(s)
            | Error::Connect(s)
            | Error::ContextClosed(s)
            | Error::Routine(s)
            | Error::Internal(s) => s.clone(),
            Error::Io(e) => e.to_string(),
        }
    }

    /// Rebuild an error received in an error frame.
    pub fn from_wire(code: u16, message: String) -> Error {
        let Some(code) = ErrorCode::from_u16(code) else {
            return Error::Protocol(format!("unknown error code {code}: {message}"));
        };
        match code {
            ErrorCode::Protocol => Error::Protocol(message),
            ErrorCode::Version => Error::Version(message),
            ErrorCode::ProtocolState => Error::ProtocolState(message),
            ErrorCode::Argument => Error::Argument(message),
            ErrorCode::InsufficientWorkers => Error::InsufficientWorkers(message),
            ErrorCode::UnknownLibrary => Error::UnknownLibrary(message),
            ErrorCode::UnknownRoutine => Error::UnknownRoutine(message),
            ErrorCode::Handle => Error::Handle(message),
            ErrorCode::NotReady => Error::NotReady(message),
            ErrorCode::DimensionMismatch => Error::DimensionMismatch(message),
            ErrorCode::TooLarge => Error::TooLarge(message),
            ErrorCode::Resource => Error::Resource(message),
            ErrorCode::Incomplete => Error::Incomplete(message),
            ErrorCode::SessionClosed => Error::SessionClosed(message),
            ErrorCode::Routing => Error::Routing(message),
            ErrorCode::GroupFailure => Error::GroupFailure(message),
            ErrorCode::Collective => Error::Collective(message),
            ErrorCode::OutOfRange => Error::OutOfRange(message),
            ErrorCode::Connect => Error::Connect(message),
            ErrorCode::ContextClosed => Error::ContextClosed(message),
            ErrorCode::Routine => Error::Routine(message),
            ErrorCode::Io => Error::Io(std::io::Error::other(message)),
            ErrorCode::Internal => Error::Internal(message),
        }
    }
}

impl From<CodecError> for Error {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::UnsupportedVersion(_) => Error::Version(e.to_string()),
            _ => Error::Protocol(e.to_string()),
        }
    }
}
