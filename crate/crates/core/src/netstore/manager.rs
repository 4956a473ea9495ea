use std::collections::HashMap;

use parking_lot::Mutex;

use super::wire::{Request, Response};
use super::{FrameHandler, NodeAddress};
use crate::castore::{BlockMap, FileId, MetadataService};
use crate::error::{Error, Result};

/// Metadata manager: the current block-map of every file and the node list.
#[derive(Default)]
pub struct ManagerService {
    maps: Mutex<HashMap<FileId, BlockMap>>,
    nodes: Mutex<Vec<NodeAddress>>,
}

impl ManagerService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file_count(&self) -> usize {
        self.maps.lock().len()
    }
}

impl MetadataService for ManagerService {
    fn get_blockmap(&self, file: &FileId) -> Result<Option<BlockMap>> {
        Ok(self.maps.lock().get(file).cloned())
    }

    fn put_blockmap(&self, map: &BlockMap, expected_previous: Option<u64>) -> Result<()> {
        map.validate()?;
        let mut maps = self.maps.lock();
        let current = maps.get(&map.file_id).map(|m| m.version);
        if current != expected_previous {
            return Err(Error::Conflict(format!(
                "{}: expected version {expected_previous:?}, current is {current:?}",
                map.file_id
            )));
        }
        if map.version <= current.unwrap_or(0) {
            return Err(Error::Conflict(format!("{}: version {} does not advance", map.file_id, map.version)));
        }
        maps.insert(map.file_id.clone(), map.clone());
        Ok(())
    }

    fn list_nodes(&self) -> Result<Vec<NodeAddress>> {
        Ok(self.nodes.lock().clone())
    }

    fn register_node(&self, node: &NodeAddress) -> Result<u16> {
        let mut nodes = self.nodes.lock();
        if let Some(i) = nodes.iter().position(|n| n == node) {
            return Ok(i as u16);
        }
        if nodes.len() >= u16::MAX as usize {
            return Err(Error::Capacity("node list is full".into()));
        }
        nodes.push(node.clone());
        Ok((nodes.len() - 1) as u16)
    }
}

impl FrameHandler for ManagerService {
    fn handle(&self, request: Request) -> Result<Response> {
        match request {
            Request::GetBlockMap { file } => self.get_blockmap(&file).map(|map| Response::GetBlockMap { map }),
            Request::PutBlockMap { expected, map } => self.put_blockmap(&map, expected).map(|()| Response::PutBlockMap),
            Request::ListNodes => self.list_nodes().map(|nodes| Response::ListNodes { nodes }),
            Request::RegisterNode { node } => self.register_node(&node).map(|index| Response::RegisterNode { index }),
            other => Err(Error::malformed(format!("manager does not serve opcode {:#04x}", other.opcode()))),
        }
    }
}
