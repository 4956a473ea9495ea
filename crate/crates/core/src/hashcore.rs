//! Hashing primitives: base digests, segmented (parallel Merkle-Damgård)
//! direct hashing, overlapping-window hashing and the chunk boundary
//! predicate.
//!
//! Segment and window hashing fan out over a [`WorkerGroup`]. With the
//! `parallel` feature disabled every group runs on the calling thread and
//! produces identical digests.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use md5::{Digest as _, Md5};
use sha2::Sha256;

use crate::error::{Error, Result};

/// Longest digest any [`Algorithm`] produces.
pub const MAX_DIGEST_LEN: usize = 32;

/// Hash family tag carried by every [`Digest`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Algorithm {
    Md5 = 1,
    Sha256 = 2,
    /// Location-style identifier that is not derived from content. Used by
    /// the non-content-addressed store mode; it cannot be computed.
    Opaque = 3,
}

impl Algorithm {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Algorithm::Md5),
            2 => Ok(Algorithm::Sha256),
            3 => Ok(Algorithm::Opaque),
            other => Err(Error::config(format!("unknown algorithm id {other}"))),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn output_len(self) -> usize {
        match self {
            Algorithm::Md5 => 16,
            Algorithm::Sha256 => 32,
            Algorithm::Opaque => 20,
        }
    }

    /// Wire digests carry only their length; each algorithm has a distinct one.
    pub fn from_output_len(len: usize) -> Result<Self> {
        match len {
            16 => Ok(Algorithm::Md5),
            32 => Ok(Algorithm::Sha256),
            20 => Ok(Algorithm::Opaque),
            other => Err(Error::malformed(format!("no algorithm with {other}-byte digests"))),
        }
    }

    pub fn is_content_hash(self) -> bool {
        self != Algorithm::Opaque
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "md5" => Ok(Algorithm::Md5),
            "sha256" => Ok(Algorithm::Sha256),
            other => Err(Error::config(format!("unknown hash algorithm '{other}'"))),
        }
    }

    fn check_computable(self) -> Result<()> {
        if self.is_content_hash() {
            Ok(())
        } else {
            Err(Error::config("opaque identifiers cannot be computed from content"))
        }
    }
}

impl Default for Algorithm {
    fn default() -> Self {
        Algorithm::Md5
    }
}

/// Fixed-length hash value identifying a block of content.
///
/// Equality and ordering are byte-wise over the digest bytes.
#[derive(Clone, Copy)]
pub struct Digest {
    algorithm: Algorithm,
    bytes: [u8; MAX_DIGEST_LEN],
}

impl Digest {
    pub fn from_slice(algorithm: Algorithm, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != algorithm.output_len() {
            return Err(Error::malformed(format!(
                "{:?} digest must be {} bytes, got {}",
                algorithm,
                algorithm.output_len(),
                bytes.len()
            )));
        }
        let mut buf = [0u8; MAX_DIGEST_LEN];
        buf[..bytes.len()].copy_from_slice(bytes);
        Ok(Digest { algorithm, bytes: buf })
    }

    /// Infers the algorithm from the digest length.
    pub fn from_wire(bytes: &[u8]) -> Result<Self> {
        Digest::from_slice(Algorithm::from_output_len(bytes.len())?, bytes)
    }

    pub fn from_hex(algorithm: Algorithm, hex: &str) -> Result<Self> {
        if hex.len() % 2 != 0 || !hex.is_ascii() {
            return Err(Error::malformed("odd-length or non-ascii hex digest"));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| Error::malformed(format!("bad hex digest: {e}")))?;
        Digest::from_slice(algorithm, &bytes)
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.algorithm.output_len()]
    }

    pub fn len(&self) -> usize {
        self.algorithm.output_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_hex(&self) -> String {
        self.as_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First eight bytes read as a little-endian integer.
    pub fn prefix_u64(&self) -> u64 {
        let mut word = [0u8; 8];
        word.copy_from_slice(&self.bytes[..8]);
        u64::from_le_bytes(word)
    }
}

impl PartialEq for Digest {
    fn eq(&self, other: &Self) -> bool {
        self.as_bytes() == other.as_bytes()
    }
}

impl Eq for Digest {}

impl Hash for Digest {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.as_bytes().hash(state);
    }
}

impl PartialOrd for Digest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Digest {
    fn cmp(&self, other: &Self) -> Ordering {
        self.as_bytes().cmp(other.as_bytes())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({:?}:{})", self.algorithm, self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Parameters for segmented direct hashing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SegmentedHashParams {
    pub segment_size: usize,
    pub algorithm: Algorithm,
}

impl SegmentedHashParams {
    pub fn new(segment_size: usize, algorithm: Algorithm) -> Result<Self> {
        let params = SegmentedHashParams { segment_size, algorithm };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_size == 0 {
            return Err(Error::config("segment_size must be > 0"));
        }
        self.algorithm.check_computable()
    }
}

impl Default for SegmentedHashParams {
    fn default() -> Self {
        SegmentedHashParams { segment_size: 64 * 1024, algorithm: Algorithm::Md5 }
    }
}

/// Parameters for overlapping-window hashing and boundary detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowHashParams {
    pub window: usize,
    pub stride: usize,
    pub boundary_bits: u32,
    pub boundary_target: u64,
    pub algorithm: Algorithm,
}

impl WindowHashParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("window size must be >= 1"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be >= 1"));
        }
        if self.boundary_bits > 32 {
            return Err(Error::config("boundary_bits must be in 0..=32"));
        }
        if self.boundary_target >= 1u64 << self.boundary_bits {
            return Err(Error::config(format!(
                "boundary_target {} does not fit in {} bits",
                self.boundary_target, self.boundary_bits
            )));
        }
        self.algorithm.check_computable()
    }

    /// Number of windows that fit in `len` bytes.
    pub fn window_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.stride + 1
        }
    }

    pub fn is_boundary(&self, digest: &Digest) -> bool {
        is_boundary(digest, self.boundary_bits, self.boundary_target)
    }
}

impl Default for WindowHashParams {
    fn default() -> Self {
        WindowHashParams {
            window: 48,
            stride: 1,
            boundary_bits: 13,
            boundary_target: 0,
            algorithm: Algorithm::Md5,
        }
    }
}

/// One evaluated window: its offset within the hashed data and its digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowHash {
    pub offset: u64,
    pub digest: Digest,
}

/// Hashes `data` with the sequential algorithm.
pub fn base_hash(data: &[u8], algorithm: Algorithm) -> Result<Digest> {
    algorithm.check_computable()?;
    Ok(hash_unchecked(data, algorithm))
}

pub(crate) fn hash_unchecked(data: &[u8], algorithm: Algorithm) -> Digest {
    let mut bytes = [0u8; MAX_DIGEST_LEN];
    match algorithm {
        Algorithm::Md5 => bytes[..16].copy_from_slice(&Md5::digest(data)),
        Algorithm::Sha256 => bytes[..32].copy_from_slice(&Sha256::digest(data)),
        Algorithm::Opaque => unreachable!("opaque identifiers are rejected during validation"),
    }
    Digest { algorithm, bytes }
}

/// Outer hash over the concatenation of already computed segment digests.
pub(crate) fn combine_segments(segments: &[Digest], algorithm: Algorithm) -> Digest {
    let width = algorithm.output_len();
    let mut concat = Vec::with_capacity(segments.len() * width);
    for digest in segments {
        concat.extend_from_slice(digest.as_bytes());
    }
    hash_unchecked(&concat, algorithm)
}

/// Direct hash of a block using the global worker pool.
pub fn direct_hash(data: &[u8], params: &SegmentedHashParams) -> Result<Digest> {
    direct_hash_in(&WorkerGroup::global(), data, params)
}

/// Direct hash of a block: every `segment_size` segment is hashed
/// independently on `group`, then the concatenated segment digests are
/// hashed once more on the calling thread.
pub fn direct_hash_in(group: &WorkerGroup, data: &[u8], params: &SegmentedHashParams) -> Result<Digest> {
    params.validate()?;
    let segment_size = params.segment_size;
    let algorithm = params.algorithm;
    let segments = data.len().div_ceil(segment_size);
    let digests = group.map_ordered(segments, |i| {
        let start = i * segment_size;
        let end = (start + segment_size).min(data.len());
        hash_unchecked(&data[start..end], algorithm)
    });
    Ok(combine_segments(&digests, algorithm))
}

/// Digest of every window `[i, i + window)` for `i = 0, stride, 2*stride, ...`
/// that fits in `data`, in ascending offset order.
pub fn window_hashes(data: &[u8], params: &WindowHashParams) -> Result<Vec<WindowHash>> {
    window_hashes_in(&WorkerGroup::global(), data, params)
}

pub fn window_hashes_in(group: &WorkerGroup, data: &[u8], params: &WindowHashParams) -> Result<Vec<WindowHash>> {
    params.validate()?;
    let count = params.window_count(data.len());
    let (window, stride, algorithm) = (params.window, params.stride, params.algorithm);
    Ok(group.map_ordered(count, |k| {
        let offset = k * stride;
        WindowHash {
            offset: offset as u64,
            digest: hash_unchecked(&data[offset..offset + window], algorithm),
        }
    }))
}

/// True when the low `bits` bits of the digest's little-endian 64-bit
/// prefix equal `target`. `bits == 0` matches every digest.
pub fn is_boundary(digest: &Digest, bits: u32, target: u64) -> bool {
    debug_assert!(bits <= 32);
    let mask = (1u64 << bits) - 1;
    digest.prefix_u64() & mask == target
}

/// A set of workers that data-parallel hashing fans out over.
///
/// `WorkerGroup::global()` borrows the process-wide pool; `new(n)` owns a
/// dedicated pool of `n` threads. A group of one worker runs inline.
#[derive(Clone)]
pub struct WorkerGroup {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<std::sync::Arc<rayon::ThreadPool>>,
}

/// Below this many items the parallel path is not worth the fork/join.
#[cfg(feature = "parallel")]
const PARALLEL_THRESHOLD: usize = 2;

impl WorkerGroup {
    pub fn sequential() -> Self {
        WorkerGroup {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    pub fn global() -> Self {
        #[cfg(feature = "parallel")]
        {
            WorkerGroup { workers: rayon::current_num_threads(), pool: None }
        }
        #[cfg(not(feature = "parallel"))]
        {
            WorkerGroup::sequential()
        }
    }

    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::config("worker count must be >= 1"));
        }
        if workers == 1 {
            return Ok(WorkerGroup::sequential());
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .thread_name(|i| format!("hash-worker-{i}"))
                .build()
                .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
            Ok(WorkerGroup { workers, pool: Some(std::sync::Arc::new(pool)) })
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(WorkerGroup { workers })
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && self.workers > 1
    }

    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map_ordered<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            if self.workers > 1 && n >= PARALLEL_THRESHOLD {
                return match &self.pool {
                    Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
                    None => (0..n).into_par_iter().map(&f).collect(),
                };
            }
        }
        (0..n).map(f).collect()
    }
}

impl fmt::Debug for WorkerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkerGroup").field("workers", &self.workers).finish()
    }
}
