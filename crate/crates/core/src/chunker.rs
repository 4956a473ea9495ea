//! Fixed-size and content-defined chunking.
//!
//! [`ChunkerState`] accepts a stream in arbitrarily sized pushes and emits
//! exactly the chunks [`chunk_whole`] produces for the concatenated input.
//! Boundary detection is delegated to a [`WindowScanner`], so the same cut
//! logic drives both inline hashing and the batched pipeline.

use std::convert::Infallible;

use crate::error::{Error, Result};
use crate::hashcore::{
    self, direct_hash_in, hash_unchecked, Digest, SegmentedHashParams, WindowHashParams, WorkerGroup,
};

/// How a stream is split into blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Fixed { block_size: usize },
    ContentDefined { window: WindowHashParams, min_chunk: usize, max_chunk: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkingPolicy {
    pub kind: PolicyKind,
    /// Parameters of the direct hash that names each chunk.
    pub digest: SegmentedHashParams,
}

impl ChunkingPolicy {
    pub fn fixed(block_size: usize) -> Result<Self> {
        let policy = ChunkingPolicy {
            kind: PolicyKind::Fixed { block_size },
            digest: SegmentedHashParams::default(),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn content_defined(window: WindowHashParams, min_chunk: usize, max_chunk: usize) -> Result<Self> {
        let policy = ChunkingPolicy {
            kind: PolicyKind::ContentDefined { window, min_chunk, max_chunk },
            digest: SegmentedHashParams::default(),
        };
        policy.validate()?;
        Ok(policy)
    }

    /// 1 MiB fixed blocks.
    pub fn default_fixed() -> Self {
        ChunkingPolicy::fixed(1 << 20).expect("valid default")
    }

    /// Content-defined chunks of roughly 1.3 MB on average, bounded to
    /// [256 KiB, 4 MiB]: a 48-byte window at every offset, 20 boundary bits.
    ///
    /// A stride above 1 is faster but anchors the window grid to the chunk
    /// start, so an insertion that is not a multiple of the stride keeps
    /// later chunks from resynchronising.
    pub fn default_cdc() -> Self {
        let window = WindowHashParams { window: 48, stride: 1, boundary_bits: 20, ..WindowHashParams::default() };
        ChunkingPolicy::content_defined(window, 256 * 1024, 4 * 1024 * 1024).expect("valid default")
    }

    pub fn with_digest(mut self, digest: SegmentedHashParams) -> Result<Self> {
        self.digest = digest;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.digest.validate()?;
        match self.kind {
            PolicyKind::Fixed { block_size } => {
                if block_size == 0 {
                    return Err(Error::config("fixed block size must be > 0"));
                }
                if block_size > u32::MAX as usize {
                    return Err(Error::config("fixed block size must fit in 32 bits"));
                }
            }
            PolicyKind::ContentDefined { window, min_chunk, max_chunk } => {
                window.validate()?;
                if min_chunk == 0 || min_chunk > max_chunk {
                    return Err(Error::config(format!(
                        "chunk bounds must satisfy 0 < min ({min_chunk}) <= max ({max_chunk})"
                    )));
                }
                if window.window > max_chunk {
                    return Err(Error::config("window must not exceed max_chunk"));
                }
                if max_chunk > u32::MAX as usize {
                    return Err(Error::config("max_chunk must fit in 32 bits"));
                }
            }
        }
        Ok(())
    }

    pub fn is_content_defined(&self) -> bool {
        matches!(self.kind, PolicyKind::ContentDefined { .. })
    }

    /// Largest chunk this policy can emit.
    pub fn max_chunk(&self) -> usize {
        match self.kind {
            PolicyKind::Fixed { block_size } => block_size,
            PolicyKind::ContentDefined { max_chunk, .. } => max_chunk,
        }
    }
}

/// A chunk of a stream, named by the direct hash of its bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub offset: u64,
    pub length: usize,
    pub digest: Digest,
}

/// A cut that has not been hashed yet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawChunk {
    pub offset: u64,
    pub data: Vec<u8>,
}

/// Finds boundary windows on a strided grid.
pub trait WindowScanner {
    type Error;

    /// `data` holds stream bytes starting at absolute offset `base`.
    /// Evaluates windows starting at `first`, `first + stride`, ... up to and
    /// including `last` and returns the absolute offset of the first one
    /// whose digest satisfies the boundary predicate.
    fn first_boundary(
        &mut self,
        data: &[u8],
        base: u64,
        first: u64,
        last: u64,
        params: &WindowHashParams,
    ) -> std::result::Result<Option<u64>, Self::Error>;
}

/// Hashes windows on the calling thread or the given worker group.
#[derive(Clone, Debug)]
pub struct InlineScanner {
    group: WorkerGroup,
}

/// Windows hashed per parallel round when scanning on a worker group.
const SCAN_BLOCK: usize = 4096;

impl InlineScanner {
    pub fn new(group: WorkerGroup) -> Self {
        InlineScanner { group }
    }
}

impl Default for InlineScanner {
    fn default() -> Self {
        InlineScanner::new(WorkerGroup::global())
    }
}

impl WindowScanner for InlineScanner {
    type Error = Infallible;

    fn first_boundary(
        &mut self,
        data: &[u8],
        base: u64,
        first: u64,
        last: u64,
        params: &WindowHashParams,
    ) -> std::result::Result<Option<u64>, Infallible> {
        let (w, stride) = (params.window, params.stride);
        let count = ((last - first) as usize) / stride + 1;
        let probe = |k: usize| {
            let rel = (first - base) as usize + k * stride;
            params.is_boundary(&hash_unchecked(&data[rel..rel + w], params.algorithm))
        };
        if !self.group.is_parallel() {
            return Ok((0..count).find(|&k| probe(k)).map(|k| first + (k * stride) as u64));
        }
        let mut done = 0;
        while done < count {
            let n = SCAN_BLOCK.min(count - done);
            let hits = self.group.map_ordered(n, |j| probe(done + j));
            if let Some(j) = hits.iter().position(|&hit| hit) {
                return Ok(Some(first + ((done + j) * stride) as u64));
            }
            done += n;
        }
        Ok(None)
    }
}

/// Streaming chunker state.
///
/// `pending` holds exactly the stream bytes `[chunk_start, stream_len)`.
#[derive(Clone, Debug)]
pub struct ChunkerState {
    policy: ChunkingPolicy,
    pending: Vec<u8>,
    chunk_start: u64,
    next_window: u64,
    stream_len: u64,
}

impl ChunkerState {
    pub fn new(policy: ChunkingPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(ChunkerState { policy, pending: Vec::new(), chunk_start: 0, next_window: 0, stream_len: 0 })
    }

    pub fn policy(&self) -> &ChunkingPolicy {
        &self.policy
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn chunk_start(&self) -> u64 {
        self.chunk_start
    }

    pub fn next_window(&self) -> u64 {
        self.next_window
    }

    pub fn stream_len(&self) -> u64 {
        self.stream_len
    }

    /// Appends `buffer` and returns every chunk completed by it, hashed on
    /// the global worker pool.
    pub fn push(&mut self, buffer: &[u8]) -> Vec<Chunk> {
        let group = WorkerGroup::global();
        let mut scanner = InlineScanner::new(group.clone());
        let raws = match self.push_cuts(buffer, &mut scanner) {
            Ok(raws) => raws,
            Err(never) => match never {},
        };
        self.digest_all(&group, raws)
    }

    /// Emits the unterminated tail, if any, as the final chunk.
    pub fn finish(&mut self) -> Vec<Chunk> {
        let group = WorkerGroup::global();
        let raws: Vec<RawChunk> = self.finish_cut().into_iter().collect();
        self.digest_all(&group, raws)
    }

    fn digest_all(&self, group: &WorkerGroup, raws: Vec<RawChunk>) -> Vec<Chunk> {
        raws.into_iter()
            .map(|raw| Chunk {
                offset: raw.offset,
                length: raw.data.len(),
                digest: direct_hash_in(group, &raw.data, &self.policy.digest).expect("validated policy"),
            })
            .collect()
    }

    /// Appends `buffer` and returns the completed cuts without hashing them.
    pub fn push_cuts<S: WindowScanner>(
        &mut self,
        buffer: &[u8],
        scanner: &mut S,
    ) -> std::result::Result<Vec<RawChunk>, S::Error> {
        self.pending.extend_from_slice(buffer);
        self.stream_len += buffer.len() as u64;
        let mut out = Vec::new();
        match self.policy.kind {
            PolicyKind::Fixed { block_size } => {
                while self.pending.len() >= block_size {
                    out.push(self.cut_at(self.chunk_start + block_size as u64));
                }
            }
            PolicyKind::ContentDefined { window, min_chunk, max_chunk } => {
                let w = window.window as u64;
                let stride = window.stride as u64;
                loop {
                    let limit = self.chunk_start + max_chunk as u64;
                    let start = self
                        .next_window
                        .max(self.chunk_start + (min_chunk as u64).saturating_sub(w));
                    let end = limit.min(self.stream_len);
                    self.next_window = start;
                    if start + w <= end {
                        let last = end - w;
                        let found = scanner.first_boundary(&self.pending, self.chunk_start, start, last, &window)?;
                        if let Some(i) = found {
                            out.push(self.cut_at(i + w));
                            continue;
                        }
                        self.next_window = start + ((last - start) / stride + 1) * stride;
                    }
                    if self.stream_len >= limit {
                        out.push(self.cut_at(limit));
                        continue;
                    }
                    break;
                }
            }
        }
        Ok(out)
    }

    /// Takes the unterminated tail and resets the state for a new stream
    /// position.
    pub fn finish_cut(&mut self) -> Option<RawChunk> {
        if self.pending.is_empty() {
            return None;
        }
        let end = self.stream_len;
        Some(self.cut_at(end))
    }

    fn cut_at(&mut self, cut: u64) -> RawChunk {
        let len = (cut - self.chunk_start) as usize;
        let rest = self.pending.split_off(len);
        let data = std::mem::replace(&mut self.pending, rest);
        let raw = RawChunk { offset: self.chunk_start, data };
        self.chunk_start = cut;
        self.next_window = cut;
        raw
    }
}

/// Splits `data` into `block_size` blocks; the last one holds the remainder.
pub fn chunk_fixed(data: &[u8], block_size: usize, digest: &SegmentedHashParams) -> Result<Vec<Chunk>> {
    if block_size == 0 {
        return Err(Error::config("fixed block size must be > 0"));
    }
    digest.validate()?;
    let group = WorkerGroup::global();
    data.chunks(block_size)
        .enumerate()
        .map(|(i, block)| {
            Ok(Chunk {
                offset: (i * block_size) as u64,
                length: block.len(),
                digest: direct_hash_in(&group, block, digest)?,
            })
        })
        .collect()
}

/// One-shot chunking of a complete input.
///
/// Written independently of [`ChunkerState`]: every candidate window is
/// hashed directly from `data`. Streaming output must match it exactly.
pub fn chunk_whole(data: &[u8], policy: &ChunkingPolicy) -> Result<Vec<Chunk>> {
    policy.validate()?;
    let (window, min_chunk, max_chunk) = match policy.kind {
        PolicyKind::Fixed { block_size } => return chunk_fixed(data, block_size, &policy.digest),
        PolicyKind::ContentDefined { window, min_chunk, max_chunk } => (window, min_chunk, max_chunk),
    };
    let w = window.window;
    let mut cuts = Vec::new();
    let mut start = 0usize;
    while start < data.len() {
        let limit = (start + max_chunk).min(data.len());
        let mut i = start + min_chunk.saturating_sub(w);
        let mut cut = None;
        while i + w <= limit {
            let digest = hashcore::base_hash(&data[i..i + w], window.algorithm)?;
            if window.is_boundary(&digest) {
                cut = Some(i + w);
                break;
            }
            i += window.stride;
        }
        let end = cut.unwrap_or(limit);
        cuts.push((start, end));
        start = end;
    }
    let group = WorkerGroup::global();
    cuts.into_iter()
        .map(|(s, e)| {
            Ok(Chunk { offset: s as u64, length: e - s, digest: direct_hash_in(&group, &data[s..e], &policy.digest)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashcore::Algorithm;

    fn small_cdc(bits: u32, min: usize, max: usize) -> ChunkingPolicy {
        let window = WindowHashParams { window: 8, stride: 1, boundary_bits: bits, ..WindowHashParams::default() };
        ChunkingPolicy::content_defined(window, min, max).unwrap()
    }

    fn noise(len: usize, seed: u64) -> Vec<u8> {
        let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        (0..len)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                x as u8
            })
            .collect()
    }

    #[test]
    fn fixed_remainder_rule() {
        let params = SegmentedHashParams::default();
        let lens: Vec<usize> = chunk_fixed(&[1u8; 10], 4, &params).unwrap().iter().map(|c| c.length).collect();
        assert_eq!(lens, vec![4, 4, 2]);
        assert!(chunk_fixed(&[], 4, &params).unwrap().is_empty());
        assert!(chunk_fixed(&[1], 0, &params).is_err());
    }

    #[test]
    fn fixed_megabyte_blocks() {
        let data = noise(3 << 20, 1);
        let chunks = chunk_fixed(&data, 1 << 20, &SegmentedHashParams::default()).unwrap();
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.length == 1 << 20));
    }

    #[test]
    fn short_push_emits_nothing() {
        let mut state = ChunkerState::new(small_cdc(4, 16, 64)).unwrap();
        assert!(state.push(b"abc").is_empty());
        assert_eq!(state.pending_len(), 3);
        let tail = state.finish();
        assert_eq!(tail.len(), 1);
        assert_eq!(tail[0].length, 3);
        assert!(state.finish().is_empty());
    }

    #[test]
    fn every_window_boundary_cuts_at_min() {
        // b = 0 makes every evaluated window a boundary.
        let policy = small_cdc(0, 8, 64);
        let chunks = chunk_whole(&noise(100, 2), &policy).unwrap();
        assert_eq!(chunks[0].length, 8);
        let policy = small_cdc(0, 3, 64);
        assert_eq!(chunk_whole(&noise(100, 2), &policy).unwrap()[0].length, 8);
    }

    #[test]
    fn finish_with_hundred_pending_bytes() {
        let mut state = ChunkerState::new(small_cdc(20, 200, 400)).unwrap();
        assert!(state.push(&noise(100, 3)).is_empty());
        let out = state.finish();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].length, 100);
        assert_eq!(out[0].offset, 0);
    }

    #[test]
    fn forced_cut_at_max() {
        // 32 boundary bits on 300 bytes practically never match.
        let policy = small_cdc(32, 16, 100);
        let lens: Vec<usize> = chunk_whole(&noise(300, 4), &policy).unwrap().iter().map(|c| c.length).collect();
        assert_eq!(lens, vec![100, 100, 100]);
    }

    #[test]
    fn byte_pushes_match_one_shot() {
        let policy = small_cdc(5, 16, 200);
        let data = noise(5000, 5);
        let expected = chunk_whole(&data, &policy).unwrap();
        let mut state = ChunkerState::new(policy).unwrap();
        let mut got = Vec::new();
        for b in &data {
            got.extend(state.push(std::slice::from_ref(b)));
        }
        got.extend(state.finish());
        assert_eq!(got, expected);
    }

    #[test]
    fn strided_grid_restarts_at_each_cut() {
        let window = WindowHashParams { window: 4, stride: 3, boundary_bits: 3, ..WindowHashParams::default() };
        let policy = ChunkingPolicy::content_defined(window, 10, 90).unwrap();
        let data = noise(4000, 6);
        let expected = chunk_whole(&data, &policy).unwrap();
        let mut state = ChunkerState::new(policy).unwrap();
        let mut got = Vec::new();
        for piece in data.chunks(37) {
            got.extend(state.push(piece));
        }
        got.extend(state.finish());
        assert_eq!(got, expected);
    }

    #[test]
    fn policy_validation() {
        let w = WindowHashParams::default();
        assert!(ChunkingPolicy::fixed(0).is_err());
        assert!(ChunkingPolicy::content_defined(w, 0, 10).is_err());
        assert!(ChunkingPolicy::content_defined(w, 100, 10).is_err());
        assert!(ChunkingPolicy::content_defined(w, 10, 40).is_err()); // window 48 > max
        let policy = ChunkingPolicy::default_cdc();
        assert!(policy.validate().is_ok());
        assert_eq!(policy.digest.algorithm, Algorithm::Md5);
    }

    #[test]
    fn empty_input_has_no_chunks() {
        assert!(chunk_whole(&[], &ChunkingPolicy::default_cdc()).unwrap().is_empty());
        assert!(chunk_whole(&[], &ChunkingPolicy::default_fixed()).unwrap().is_empty());
    }
}
