use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;

use super::blockmap::{BlockMap, BlockRecord, FileId};
use super::similarity::SimilarityReport;
use crate::accelerant::{Pipeline, Task, TaskParams, Ticket};
use crate::chunker::{ChunkerState, ChunkingPolicy, InlineScanner, RawChunk, WindowScanner};
use crate::error::{Error, Result};
use crate::hashcore::{direct_hash_in, Algorithm, Digest, SegmentedHashParams, WindowHashParams, WorkerGroup};
use crate::netstore::{upload_striped, NodeAddress};

/// Block storage as seen by a client.
pub trait BlockService: Send + Sync {
    fn put_block(&self, digest: &Digest, data: &[u8]) -> Result<()>;
    fn get_block(&self, digest: &Digest) -> Result<Vec<u8>>;
    fn has_block(&self, digest: &Digest) -> Result<bool>;
}

/// Block-map metadata as seen by a client.
pub trait MetadataService: Send + Sync {
    fn get_blockmap(&self, file: &FileId) -> Result<Option<BlockMap>>;
    /// Publishes `map` if the stored version equals `expected_previous`
    /// (`None` meaning no version yet); otherwise fails with a conflict.
    fn put_blockmap(&self, map: &BlockMap, expected_previous: Option<u64>) -> Result<()>;
    fn list_nodes(&self) -> Result<Vec<NodeAddress>>;
    fn register_node(&self, node: &NodeAddress) -> Result<u16>;
}

/// Where chunk boundaries and block digests get computed.
#[derive(Clone)]
pub enum HashEngine {
    /// No content addressing: fixed blocks named by opaque identifiers.
    None,
    Inline(WorkerGroup),
    Pipeline(Arc<Pipeline>),
}

impl std::fmt::Debug for HashEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HashEngine::None => f.write_str("None"),
            HashEngine::Inline(g) => write!(f, "Inline({} workers)", g.workers()),
            HashEngine::Pipeline(p) => write!(f, "Pipeline({} devices)", p.device_count()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StoreConfig {
    /// Bytes buffered before boundaries are computed.
    pub write_buffer: usize,
    pub stripe_width: usize,
    /// Direct-hash parameters shared by writers, nodes and readers.
    pub digest: SegmentedHashParams,
    /// Bytes of windows per pipeline scan task.
    pub scan_piece: usize,
    /// Scan tasks kept in flight ahead of the boundary search.
    pub scan_lookahead: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            write_buffer: 4 * 1024 * 1024,
            stripe_width: 4,
            digest: SegmentedHashParams::default(),
            scan_piece: 64 * 1024,
            scan_lookahead: 1,
        }
    }
}

/// Result of a successful commit.
#[derive(Clone, Debug)]
pub struct CommitOutcome {
    pub map: BlockMap,
    pub report: SimilarityReport,
    pub uploaded_blocks: u64,
    pub uploaded_bytes: u64,
}

/// Client-side access to a store: the write/commit and read paths.
pub struct Store {
    meta: Arc<dyn MetadataService>,
    nodes: Vec<Arc<dyn BlockService>>,
    config: StoreConfig,
    engine: HashEngine,
    active: Mutex<HashSet<FileId>>,
}

impl Store {
    /// `nodes` must be in the manager's node-list order.
    pub fn new(
        meta: Arc<dyn MetadataService>,
        nodes: Vec<Arc<dyn BlockService>>,
        config: StoreConfig,
        engine: HashEngine,
    ) -> Result<Self> {
        if config.write_buffer == 0 {
            return Err(Error::config("write buffer must be > 0"));
        }
        if config.stripe_width == 0 || config.stripe_width > nodes.len() {
            return Err(Error::config(format!(
                "stripe width {} must be in 1..={} (node count)",
                config.stripe_width,
                nodes.len()
            )));
        }
        if nodes.len() > u16::MAX as usize {
            return Err(Error::config("too many storage nodes"));
        }
        if config.scan_piece == 0 || config.scan_lookahead == 0 {
            return Err(Error::config("scan piece and lookahead must be > 0"));
        }
        config.digest.validate()?;
        Ok(Store { meta, nodes, config, engine, active: Mutex::new(HashSet::new()) })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn engine(&self) -> &HashEngine {
        &self.engine
    }

    pub fn metadata(&self) -> &Arc<dyn MetadataService> {
        &self.meta
    }

    pub fn nodes(&self) -> &[Arc<dyn BlockService>] {
        &self.nodes
    }

    /// Opens the single write session for `file`.
    pub fn begin_write(&self, file: FileId, policy: ChunkingPolicy) -> Result<WriteSession<'_>> {
        policy.validate()?;
        if policy.digest != self.config.digest {
            return Err(Error::config("chunking policy digest parameters differ from the store's"));
        }
        if matches!(self.engine, HashEngine::None) && policy.is_content_defined() {
            return Err(Error::config("content-defined chunking needs a hashing engine"));
        }
        if !self.active.lock().insert(file.clone()) {
            return Err(Error::Conflict(format!("{file} already has an active write session")));
        }
        // From here on the session's Drop releases the file.
        let mut session = WriteSession {
            store: self,
            file,
            previous: None,
            known: HashMap::new(),
            chunker: ChunkerState::new(policy)?,
            buffer: Vec::with_capacity(self.config.write_buffer),
            records: Vec::new(),
            uploads: Vec::new(),
            upload_set: HashSet::new(),
            bytes_written: 0,
            failed: None,
        };
        let previous = self.meta.get_blockmap(&session.file)?;
        if let Some(prev) = &previous {
            let locations = prev.locations.clone().unwrap_or_else(|| vec![0; prev.blocks.len()]);
            session.known = prev.blocks.iter().zip(locations).map(|(b, loc)| (b.digest, loc)).collect();
        }
        session.previous = previous;
        Ok(session)
    }

    /// Reassembles the latest committed version of `file`, checking every
    /// block against its digest.
    pub fn read(&self, file: &FileId) -> Result<Vec<u8>> {
        let map = self.meta.get_blockmap(file)?.ok_or_else(|| Error::NotFound(format!("file {file}")))?;
        let mut out = Vec::with_capacity(map.file_size() as usize);
        let group = self.verify_group();
        for (i, record) in map.blocks.iter().enumerate() {
            let hint = map.locations.as_ref().map(|l| l[i] as usize);
            let data = self.fetch(&record.digest, hint)?;
            if data.len() != record.length as usize {
                return Err(Error::Integrity(format!(
                    "block {} of {file}: expected {} bytes, got {}",
                    record.digest,
                    record.length,
                    data.len()
                )));
            }
            if record.digest.algorithm().is_content_hash() {
                let params = SegmentedHashParams { algorithm: record.digest.algorithm(), ..self.config.digest };
                let actual = direct_hash_in(&group, &data, &params)?;
                if actual != record.digest {
                    return Err(Error::Integrity(format!(
                        "block at offset {} of {file} hashes to {actual}, expected {}",
                        record.offset, record.digest
                    )));
                }
            }
            out.extend_from_slice(&data);
        }
        Ok(out)
    }

    fn verify_group(&self) -> WorkerGroup {
        match &self.engine {
            HashEngine::Inline(g) => g.clone(),
            _ => WorkerGroup::global(),
        }
    }

    fn fetch(&self, digest: &Digest, hint: Option<usize>) -> Result<Vec<u8>> {
        let order = hint
            .filter(|&h| h < self.nodes.len())
            .into_iter()
            .chain((0..self.nodes.len()).filter(|&i| Some(i) != hint));
        for i in order {
            match self.nodes[i].get_block(digest) {
                Ok(data) => return Ok(data),
                Err(Error::NotFound(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Integrity(format!("block {digest} is missing from every node")))
    }
}

/// An open write of one file version.
pub struct WriteSession<'s> {
    store: &'s Store,
    file: FileId,
    previous: Option<BlockMap>,
    known: HashMap<Digest, u16>,
    chunker: ChunkerState,
    buffer: Vec<u8>,
    records: Vec<BlockRecord>,
    uploads: Vec<(Digest, Vec<u8>)>,
    upload_set: HashSet<Digest>,
    bytes_written: u64,
    failed: Option<String>,
}

impl<'s> WriteSession<'s> {
    pub fn file_id(&self) -> &FileId {
        &self.file
    }

    pub fn previous(&self) -> Option<&BlockMap> {
        self.previous.as_ref()
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    fn next_version(&self) -> u64 {
        self.previous.as_ref().map_or(1, |p| p.version + 1)
    }

    /// Buffers `data`; every full buffer is chunked and hashed.
    pub fn write(&mut self, mut data: &[u8]) -> Result<()> {
        self.check_live()?;
        self.bytes_written += data.len() as u64;
        let cap = self.store.config.write_buffer;
        while !data.is_empty() {
            let take = (cap - self.buffer.len()).min(data.len());
            self.buffer.extend_from_slice(&data[..take]);
            data = &data[take..];
            if self.buffer.len() == cap {
                self.flush_buffer()?;
            }
        }
        Ok(())
    }

    fn check_live(&self) -> Result<()> {
        match &self.failed {
            Some(cause) => Err(Error::SessionFailed(cause.clone())),
            None => Ok(()),
        }
    }

    fn fail<T>(&mut self, err: Error) -> Result<T> {
        self.failed = Some(err.to_string());
        Err(err)
    }

    fn flush_buffer(&mut self) -> Result<()> {
        let buffer = std::mem::take(&mut self.buffer);
        let cuts = match &self.store.engine {
            HashEngine::Pipeline(p) => {
                let mut scanner = PipelineScanner {
                    pipeline: p,
                    piece: self.store.config.scan_piece,
                    lookahead: self.store.config.scan_lookahead,
                };
                self.chunker.push_cuts(&buffer, &mut scanner)
            }
            HashEngine::Inline(g) => {
                let mut scanner = InlineScanner::new(g.clone());
                Ok(self.chunker.push_cuts(&buffer, &mut scanner).unwrap_or_else(|never| match never {}))
            }
            HashEngine::None => {
                let mut scanner = InlineScanner::new(WorkerGroup::sequential());
                Ok(self.chunker.push_cuts(&buffer, &mut scanner).unwrap_or_else(|never| match never {}))
            }
        };
        self.buffer = buffer;
        self.buffer.clear();
        match cuts {
            Ok(cuts) => self.absorb(cuts),
            Err(e) => self.fail(e),
        }
    }

    fn absorb(&mut self, cuts: Vec<RawChunk>) -> Result<()> {
        if cuts.is_empty() {
            return Ok(());
        }
        let digests = match self.digests(&cuts) {
            Ok(d) => d,
            Err(e) => return self.fail(e),
        };
        for (raw, digest) in cuts.into_iter().zip(digests) {
            self.records.push(BlockRecord { offset: raw.offset, length: raw.data.len() as u32, digest });
            if !self.known.contains_key(&digest) && self.upload_set.insert(digest) {
                self.uploads.push((digest, raw.data));
            }
        }
        Ok(())
    }

    fn digests(&self, cuts: &[RawChunk]) -> Result<Vec<Digest>> {
        let params = self.store.config.digest;
        match &self.store.engine {
            HashEngine::Inline(g) => cuts.iter().map(|c| direct_hash_in(g, &c.data, &params)).collect(),
            HashEngine::Pipeline(p) => {
                let total: usize = cuts.iter().map(|c| c.data.len()).sum();
                let mut staging = p.acquire(total)?;
                let mut at = 0;
                for c in cuts {
                    staging.as_mut_slice()[at..at + c.data.len()].copy_from_slice(&c.data);
                    at += c.data.len();
                }
                staging.set_used(total)?;
                let spans = cuts.iter().map(|c| c.data.len()).collect();
                let out = p.submit(Task::direct_batch(staging, params, spans))?.wait()?;
                out.digests()
                    .map(<[Digest]>::to_vec)
                    .ok_or_else(|| Error::malformed("direct-hash task returned windows"))
            }
            HashEngine::None => {
                let version = self.next_version();
                let first = self.records.len() as u32;
                Ok((0..cuts.len() as u32).map(|i| opaque_id(&self.file, version, first + i)).collect())
            }
        }
    }

    /// Flushes the tail, uploads the blocks the previous version lacks and
    /// publishes the new block-map. Nothing is published on failure.
    pub fn commit(mut self) -> Result<CommitOutcome> {
        self.check_live()?;
        if !self.buffer.is_empty() {
            self.flush_buffer()?;
        }
        if let Some(tail) = self.chunker.finish_cut() {
            self.absorb(vec![tail])?;
        }

        let previous_digests: HashSet<Digest> = self.known.keys().copied().collect();
        let report =
            SimilarityReport::tally(&previous_digests, self.records.iter().map(|r| (&r.digest, r.length as u64)));

        let blocks: Vec<(Digest, &[u8])> = self.uploads.iter().map(|(d, data)| (*d, data.as_slice())).collect();
        let placement = upload_striped(&blocks, &self.store.nodes, self.store.config.stripe_width)?;
        let placed: HashMap<Digest, u16> = blocks.iter().map(|(d, _)| *d).zip(placement).collect();
        let locations = self
            .records
            .iter()
            .map(|r| self.known.get(&r.digest).or_else(|| placed.get(&r.digest)).copied().unwrap_or(0))
            .collect();

        let map = BlockMap::new(self.file.clone(), self.next_version(), std::mem::take(&mut self.records))?
            .with_locations(locations)?;
        let expected = self.previous.as_ref().map(|p| p.version);
        self.store.meta.put_blockmap(&map, expected)?;
        Ok(CommitOutcome {
            map,
            report,
            uploaded_blocks: self.uploads.len() as u64,
            uploaded_bytes: self.uploads.iter().map(|(_, d)| d.len() as u64).sum(),
        })
    }
}

impl Drop for WriteSession<'_> {
    fn drop(&mut self) {
        self.store.active.lock().remove(&self.file);
    }
}

/// Identifier for blocks of a non-content-addressed write: FNV-1a of the
/// file id, the version and the block index.
fn opaque_id(file: &FileId, version: u64, index: u32) -> Digest {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in file.as_str().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut bytes = [0u8; 20];
    bytes[..8].copy_from_slice(&h.to_le_bytes());
    bytes[8..16].copy_from_slice(&version.to_le_bytes());
    bytes[16..].copy_from_slice(&index.to_le_bytes());
    Digest::from_slice(Algorithm::Opaque, &bytes).expect("20-byte opaque id")
}

/// Boundary search that runs window hashing as pipeline tasks, a few
/// pieces ahead of the scan position.
struct PipelineScanner<'p> {
    pipeline: &'p Pipeline,
    piece: usize,
    lookahead: usize,
}

impl WindowScanner for PipelineScanner<'_> {
    type Error = Error;

    fn first_boundary(
        &mut self,
        data: &[u8],
        base: u64,
        first: u64,
        last: u64,
        params: &WindowHashParams,
    ) -> Result<Option<u64>> {
        let stride = params.stride as u64;
        let total = ((last - first) / stride + 1) as usize;
        let per_piece = (self.piece / params.stride).max(1);
        let mut submitted = 0usize;
        let mut in_flight: VecDeque<(u64, Ticket)> = VecDeque::new();
        loop {
            while in_flight.len() < self.lookahead && submitted < total {
                let n = per_piece.min(total - submitted);
                let start = first + submitted as u64 * stride;
                let rel = (start - base) as usize;
                let bytes = &data[rel..rel + (n - 1) * params.stride + params.window];
                let ticket = self.pipeline.submit_bytes(bytes, TaskParams::Window { params: *params })?;
                in_flight.push_back((start, ticket));
                submitted += n;
            }
            let Some((start, ticket)) = in_flight.pop_front() else {
                return Ok(None);
            };
            let out = ticket.wait()?;
            let windows = out.windows().ok_or_else(|| Error::malformed("window task returned digests"))?;
            if let Some(hit) = windows.iter().find(|e| e.boundary) {
                return Ok(Some(start + hit.offset));
            }
        }
    }
}
