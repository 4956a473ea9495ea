//! Block-maps and their `MSBM` binary encoding.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MSBM" | format u16 | file_id len u16 + UTF-8 | version u64 | count u32
//! count x { offset u64 | length u32 | digest len u8 | digest }
//! [ 'L' | count u32 | count x node u16 ]      optional block locations
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::hashcore::Digest;

pub const MSBM_MAGIC: &[u8; 4] = b"MSBM";
pub const MSBM_FORMAT: u16 = 1;
const LOCATION_TAG: u8 = b'L';

/// Path-like file identifier: non-empty, no NUL, at most `u16::MAX` bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FileId(String);

impl FileId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::config("file id must be non-empty"));
        }
        if id.contains('\0') {
            return Err(Error::config("file id must not contain NUL"));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::config("file id longer than 65535 bytes"));
        }
        Ok(FileId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRecord {
    pub offset: u64,
    pub length: u32,
    pub digest: Digest,
}

/// One committed version of a file: its blocks in offset order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMap {
    pub file_id: FileId,
    pub version: u64,
    pub blocks: Vec<BlockRecord>,
    /// Index into the manager's node list of the node holding each block.
    pub locations: Option<Vec<u16>>,
}

impl BlockMap {
    pub fn new(file_id: FileId, version: u64, blocks: Vec<BlockRecord>) -> Result<Self> {
        let map = BlockMap { file_id, version, blocks, locations: None };
        map.validate()?;
        Ok(map)
    }

    pub fn with_locations(mut self, locations: Vec<u16>) -> Result<Self> {
        self.locations = Some(locations);
        self.validate()?;
        Ok(self)
    }

    pub fn file_size(&self) -> u64 {
        self.blocks.iter().map(|b| b.length as u64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut expected = 0u64;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.length == 0 {
                return Err(Error::malformed(format!("block {i} has zero length")));
            }
            if b.offset != expected {
                return Err(Error::malformed(format!(
                    "block {i} starts at {} but the previous block ends at {expected}",
                    b.offset
                )));
            }
            expected += b.length as u64;
        }
        if let Some(loc) = &self.locations {
            if loc.len() != self.blocks.len() {
                return Err(Error::malformed("location count differs from block count"));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let id = self.file_id.as_str().as_bytes();
        let mut out = Vec::with_capacity(24 + id.len() + self.blocks.len() * 32);
        out.extend_from_slice(MSBM_MAGIC);
        out.extend_from_slice(&MSBM_FORMAT.to_le_bytes());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&b.offset.to_le_bytes());
            out.extend_from_slice(&b.length.to_le_bytes());
            out.push(b.digest.len() as u8);
            out.extend_from_slice(b.digest.as_bytes());
        }
        if let Some(loc) = &self.locations {
            out.push(LOCATION_TAG);
            out.extend_from_slice(&(loc.len() as u32).to_le_bytes());
            for node in loc {
                out.extend_from_slice(&node.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MSBM_MAGIC {
            return Err(Error::malformed("bad block-map magic"));
        }
        let format = r.u16()?;
        if format != MSBM_FORMAT {
            return Err(Error::malformed(format!("unsupported block-map format {format}")));
        }
        let file_id = FileId::new(r.string()?).map_err(|e| Error::malformed(e.to_string()))?;
        let version = r.u64()?;
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let offset = r.u64()?;
            let length = r.u32()?;
            let dlen = r.u8()? as usize;
            let digest = Digest::from_wire(r.take(dlen)?)?;
            blocks.push(BlockRecord { offset, length, digest });
        }
        let locations = if r.is_empty() {
            None
        } else {
            if r.u8()? != LOCATION_TAG {
                return Err(Error::malformed("unknown block-map trailer"));
            }
            let n = r.u32()? as usize;
            let mut loc = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                loc.push(r.u16()?);
            }
            Some(loc)
        };
        if !r.is_empty() {
            return Err(Error::malformed("trailing bytes after block-map"));
        }
        let map = BlockMap { file_id, version, blocks, locations };
        map.validate()?;
        Ok(map)
    }
}

/// Little-endian cursor over a byte slice; every read is bounds-checked.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::malformed(format!("need {n} bytes, {} left", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// u16 length-prefixed UTF-8.
    pub fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::malformed("invalid UTF-8 string"))
    }
}
