use std::collections::HashMap;
use std::fs;
use std::io::ErrorKind;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};

use super::wire::{Request, Response};
use super::FrameHandler;
use crate::castore::BlockService;
use crate::error::{Error, Result};
use crate::hashcore::{direct_hash, Digest, SegmentedHashParams};

#[derive(Clone, Debug)]
pub enum NodeStorage {
    Memory,
    /// One file per block, named by the hex digest.
    Directory(PathBuf),
}

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub storage: NodeStorage,
    /// Byte budget for stored blocks; `None` is unlimited.
    pub capacity: Option<u64>,
    /// Parameters used to check incoming blocks against their digests.
    pub digest: SegmentedHashParams,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig { storage: NodeStorage::Memory, capacity: None, digest: SegmentedHashParams::default() }
    }
}

/// A storage node: blocks keyed by digest.
pub struct NodeService {
    config: NodeConfig,
    memory: RwLock<HashMap<Digest, Vec<u8>>>,
    // Serializes the check-then-store step of puts.
    put_lock: Mutex<()>,
    used: AtomicU64,
    stored: AtomicU64,
}

impl NodeService {
    pub fn new(config: NodeConfig) -> Result<Self> {
        config.digest.validate()?;
        let mut used = 0;
        let mut stored = 0;
        if let NodeStorage::Directory(dir) = &config.storage {
            fs::create_dir_all(dir)?;
            for entry in fs::read_dir(dir)? {
                let entry = entry?;
                if entry.file_name().to_string_lossy().ends_with(".blk") {
                    used += entry.metadata()?.len();
                    stored += 1;
                }
            }
        }
        Ok(NodeService {
            config,
            memory: RwLock::new(HashMap::new()),
            put_lock: Mutex::new(()),
            used: AtomicU64::new(used),
            stored: AtomicU64::new(stored),
        })
    }

    pub fn in_memory(digest: SegmentedHashParams) -> Self {
        NodeService::new(NodeConfig { digest, ..NodeConfig::default() }).expect("validated params")
    }

    pub fn block_count(&self) -> u64 {
        self.stored.load(Ordering::Relaxed)
    }

    pub fn used_bytes(&self) -> u64 {
        self.used.load(Ordering::Relaxed)
    }

    pub fn digests(&self) -> Vec<Digest> {
        match &self.config.storage {
            NodeStorage::Memory => self.memory.read().keys().copied().collect(),
            NodeStorage::Directory(dir) => {
                let Ok(entries) = fs::read_dir(dir) else { return Vec::new() };
                entries
                    .filter_map(|e| {
                        let name = e.ok()?.file_name().into_string().ok()?;
                        let (alg, hex) = name.strip_suffix(".blk")?.split_once('-')?;
                        let alg = crate::hashcore::Algorithm::from_id(alg.parse().ok()?).ok()?;
                        Digest::from_hex(alg, hex).ok()
                    })
                    .collect()
            }
        }
    }

    /// Flips one byte of a stored block. Fault injection for tests.
    pub fn corrupt(&self, digest: &Digest) -> Result<()> {
        match &self.config.storage {
            NodeStorage::Memory => {
                let mut mem = self.memory.write();
                let data = mem.get_mut(digest).ok_or_else(|| Error::NotFound(digest.to_hex()))?;
                match data.first_mut() {
                    Some(b) => *b ^= 0xFF,
                    None => data.push(0),
                }
            }
            NodeStorage::Directory(_) => {
                let path = self.path(digest);
                let mut data = fs::read(&path).map_err(|_| Error::NotFound(digest.to_hex()))?;
                match data.first_mut() {
                    Some(b) => *b ^= 0xFF,
                    None => data.push(0),
                }
                fs::write(path, data)?;
            }
        }
        Ok(())
    }

    fn path(&self, digest: &Digest) -> PathBuf {
        match &self.config.storage {
            NodeStorage::Directory(dir) => dir.join(format!("{}-{}.blk", digest.algorithm().id(), digest.to_hex())),
            NodeStorage::Memory => unreachable!("memory storage has no paths"),
        }
    }

    fn verify(&self, digest: &Digest, data: &[u8]) -> Result<()> {
        if !digest.algorithm().is_content_hash() {
            return Ok(());
        }
        let params = SegmentedHashParams { algorithm: digest.algorithm(), ..self.config.digest };
        let actual = direct_hash(data, &params)?;
        if actual != *digest {
            return Err(Error::Integrity(format!("block hashes to {actual}, sent as {digest}")));
        }
        Ok(())
    }

    fn contains(&self, digest: &Digest) -> bool {
        match &self.config.storage {
            NodeStorage::Memory => self.memory.read().contains_key(digest),
            NodeStorage::Directory(_) => self.path(digest).exists(),
        }
    }
}

impl BlockService for NodeService {
    fn put_block(&self, digest: &Digest, data: &[u8]) -> Result<()> {
        self.verify(digest, data)?;
        let _guard = self.put_lock.lock();
        if self.contains(digest) {
            return Ok(());
        }
        let len = data.len() as u64;
        if let Some(cap) = self.config.capacity {
            if self.used_bytes() + len > cap {
                return Err(Error::Capacity(format!("node holds {} of {cap} bytes", self.used_bytes())));
            }
        }
        match &self.config.storage {
            NodeStorage::Memory => {
                self.memory.write().insert(*digest, data.to_vec());
            }
            NodeStorage::Directory(_) => {
                let path = self.path(digest);
                let tmp = path.with_extension("tmp");
                fs::write(&tmp, data)?;
                fs::rename(&tmp, &path)?;
            }
        }
        self.used.fetch_add(len, Ordering::Relaxed);
        self.stored.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn get_block(&self, digest: &Digest) -> Result<Vec<u8>> {
        let found = match &self.config.storage {
            NodeStorage::Memory => self.memory.read().get(digest).cloned(),
            NodeStorage::Directory(_) => match fs::read(self.path(digest)) {
                Ok(data) => Some(data),
                Err(e) if e.kind() == ErrorKind::NotFound => None,
                Err(e) => return Err(e.into()),
            },
        };
        found.ok_or_else(|| Error::NotFound(format!("block {digest}")))
    }

    fn has_block(&self, digest: &Digest) -> Result<bool> {
        Ok(self.contains(digest))
    }
}

impl FrameHandler for NodeService {
    fn handle(&self, request: Request) -> Result<Response> {
        match request {
            Request::PutBlock { digest, data } => self.put_block(&digest, &data).map(|()| Response::PutBlock),
            Request::GetBlock { digest } => self.get_block(&digest).map(|data| Response::GetBlock { data }),
            Request::HasBlock { digest } => self.has_block(&digest).map(|present| Response::HasBlock { present }),
            other => Err(Error::malformed(format!("storage node does not serve opcode {:#04x}", other.opcode()))),
        }
    }
}
