//! Bridge between a data-parallel client and a pool of workers running
//! distributed dense linear algebra.
//!
//! A client process connects to the server's driver over a control channel,
//! is granted a dedicated group of workers, streams matrix rows straight to
//! the workers that own them, invokes library routines by name, and fetches
//! results only when it asks for them.

pub mod client;
pub mod comm;
pub mod dense;
pub mod distmatrix;
pub mod error;
pub mod mathlib;
pub mod protocol;
pub mod rng;
pub mod server;

pub use dense::DenseMatrix;
pub use distmatrix::{LayoutDescriptor, MatrixHandle};
pub use error::{Error, ErrorCode, Result};
pub use protocol::Value;
