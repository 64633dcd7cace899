use std::collections::BTreeMap;
use std::sync::Arc;

use super::plugin::LibraryPlugin;
use crate::comm::WorkerId;
use crate::distmatrix::{LayoutDescriptor, MatrixHandle};
use crate::error::{Error, Result};

/// Driver-side state of one client connection.
pub struct Session {
    pub id: u32,
    pub client: String,
    /// Pool workers in rank order, once REQUEST_WORKERS succeeded.
    pub members: Option<Vec<WorkerId>>,
    pub libraries: BTreeMap<String, Arc<dyn LibraryPlugin>>,
    pub matrices: BTreeMap<u32, LayoutDescriptor>,
}

impl Session {
    pub fn new(id: u32, client: String) -> Self {
        Self {
            id,
            client,
            members: None,
            libraries: BTreeMap::new(),
            matrices: BTreeMap::new(),
        }
    }

    pub fn members(&self) -> Result<&[WorkerId]> {
        self.members
            .as_deref()
            .ok_or_else(|| Error::ProtocolState(format!("session {} has no workers yet", self.id)))
    }

    /// Layout of a matrix owned by this session whose dimensions match the
    /// handle.
    pub fn resolve(&self, h: &MatrixHandle) -> Result<&LayoutDescriptor> {
        let layout = self.matrices.get(&h.id).ok_or_else(|| {
            Error::Handle(format!(
                "matrix {} does not exist in session {}",
                h.id, self.id
            ))
        })?;
        if layout.rows() != h.rows || layout.cols() != h.cols {
            return Err(Error::Handle(format!(
                "matrix {} is {}x{}, handle claims {}x{}",
                h.id,
                layout.rows(),
                layout.cols(),
                h.rows,
                h.cols
            )));
        }
        Ok(layout)
    }
}
