//! Compute backends a device manager drives.
//!
//! A backend instance is one "device". Each task passes through
//! `copy_in` (host staging buffer to device buffer), `compute`, and
//! `copy_out` in that order.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::task::{TaskOutput, TaskParams, WindowEval};
use crate::error::Result;
use crate::hashcore::{direct_hash_in, window_hashes_in, WorkerGroup};

/// Device-side copy of a task input. Reused across tasks.
#[derive(Debug, Default)]
pub struct DeviceBuffer {
    data: Vec<u8>,
}

impl DeviceBuffer {
    pub fn load(&mut self, input: &[u8]) {
        self.data.clear();
        self.data.extend_from_slice(input);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn copy_in(&self, device: &mut DeviceBuffer, input: &[u8]) -> Result<()>;

    fn compute(&self, device: &DeviceBuffer, params: &TaskParams) -> Result<TaskOutput>;

    fn copy_out(&self, output: TaskOutput) -> Result<TaskOutput> {
        Ok(output)
    }
}

/// Runs a task with the hashcore primitives on `group`.
pub fn compute_on(group: &WorkerGroup, data: &[u8], params: &TaskParams) -> Result<TaskOutput> {
    match params {
        TaskParams::Direct { params, spans } => {
            let mut offset = 0;
            let mut digests = Vec::with_capacity(spans.len());
            for &len in spans {
                digests.push(direct_hash_in(group, &data[offset..offset + len], params)?);
                offset += len;
            }
            Ok(TaskOutput::Digests(digests))
        }
        TaskParams::Window { params } => {
            let evals = window_hashes_in(group, data, params)?
                .into_iter()
                .map(|w| WindowEval { offset: w.offset, digest: w.digest, boundary: params.is_boundary(&w.digest) })
                .collect();
            Ok(TaskOutput::Windows(evals))
        }
    }
}

/// Hashes on a dedicated group of CPU workers.
pub struct CpuParallelBackend {
    group: WorkerGroup,
}

impl CpuParallelBackend {
    pub fn new(workers: usize) -> Result<Self> {
        Ok(CpuParallelBackend { group: WorkerGroup::new(workers)? })
    }
}

impl Backend for CpuParallelBackend {
    fn name(&self) -> &str {
        "cpu_parallel"
    }

    fn copy_in(&self, device: &mut DeviceBuffer, input: &[u8]) -> Result<()> {
        device.load(input);
        Ok(())
    }

    fn compute(&self, device: &DeviceBuffer, params: &TaskParams) -> Result<TaskOutput> {
        compute_on(&self.group, device.as_slice(), params)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct MemoKey {
    fingerprint: (u64, u64),
    len: usize,
    params: TaskParams,
}

fn fingerprint(data: &[u8]) -> (u64, u64) {
    let mut a = DefaultHasher::new();
    0x5eed_0001u32.hash(&mut a);
    a.write(data);
    let mut b = DefaultHasher::new();
    0x5eed_0002u32.hash(&mut b);
    b.write(data);
    (a.finish(), b.finish())
}

/// Results remembered by the instant oracle, shareable across pipelines.
///
/// Entries are keyed by a 128-bit content fingerprint plus the task
/// parameters. A miss computes the result sequentially and records it.
#[derive(Default)]
pub struct OracleMemo {
    entries: Mutex<HashMap<MemoKey, Arc<TaskOutput>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl std::fmt::Debug for OracleMemo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "OracleMemo({} entries, {} hits, {} misses)", self.len(), self.hits(), self.misses())
    }
}

impl OracleMemo {
    pub fn new() -> Arc<Self> {
        Arc::new(OracleMemo::default())
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, data: &[u8], params: &TaskParams) -> Result<TaskOutput> {
        let key = MemoKey { fingerprint: fingerprint(data), len: data.len(), params: params.clone() };
        if let Some(hit) = self.entries.lock().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(TaskOutput::clone(hit));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let output = compute_on(&WorkerGroup::sequential(), data, params)?;
        self.entries.lock().insert(key, Arc::new(output.clone()));
        Ok(output)
    }
}

/// Returns hashes as if computing them took no time.
pub struct InstantOracleBackend {
    memo: Arc<OracleMemo>,
}

impl InstantOracleBackend {
    pub fn new(memo: Arc<OracleMemo>) -> Self {
        InstantOracleBackend { memo }
    }
}

impl Backend for InstantOracleBackend {
    fn name(&self) -> &str {
        "instant_oracle"
    }

    fn copy_in(&self, device: &mut DeviceBuffer, input: &[u8]) -> Result<()> {
        device.load(input);
        Ok(())
    }

    fn compute(&self, device: &DeviceBuffer, params: &TaskParams) -> Result<TaskOutput> {
        self.memo.lookup(device.as_slice(), params)
    }
}

/// Cost of one stage: a fixed latency plus a per-MiB transfer or compute time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCost {
    pub fixed: Duration,
    pub per_mib: Duration,
}

impl StageCost {
    pub const ZERO: StageCost = StageCost { fixed: Duration::ZERO, per_mib: Duration::ZERO };

    pub fn fixed(d: Duration) -> Self {
        StageCost { fixed: d, per_mib: Duration::ZERO }
    }

    pub fn millis(ms: u64) -> Self {
        StageCost::fixed(Duration::from_millis(ms))
    }

    pub fn for_bytes(&self, bytes: usize) -> Duration {
        self.fixed + self.per_mib.mul_f64(bytes as f64 / (1024.0 * 1024.0))
    }
}

/// Per-stage costs of the simulated device.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimCosts {
    /// Charged in the host-side pre stage whenever a staging buffer has to
    /// be allocated rather than taken from the pool.
    pub alloc: StageCost,
    pub copy_in: StageCost,
    pub compute: StageCost,
    pub copy_out: StageCost,
}

impl SimCosts {
    pub fn uniform(copy_in_ms: u64, compute_ms: u64, copy_out_ms: u64) -> Self {
        SimCosts {
            alloc: StageCost::ZERO,
            copy_in: StageCost::millis(copy_in_ms),
            compute: StageCost::millis(compute_ms),
            copy_out: StageCost::millis(copy_out_ms),
        }
    }
}

/// Holds the calling thread until `cost` has elapsed since `start`.
pub(crate) fn pad_to(start: Instant, cost: Duration) {
    let deadline = start + cost;
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}

/// Correct results, with each stage padded to its configured cost.
pub struct SimulatedBackend {
    costs: SimCosts,
}

impl SimulatedBackend {
    pub fn new(costs: SimCosts) -> Self {
        SimulatedBackend { costs }
    }
}

impl Backend for SimulatedBackend {
    fn name(&self) -> &str {
        "simulated"
    }

    fn copy_in(&self, device: &mut DeviceBuffer, input: &[u8]) -> Result<()> {
        let start = Instant::now();
        device.load(input);
        pad_to(start, self.costs.copy_in.for_bytes(input.len()));
        Ok(())
    }

    fn compute(&self, device: &DeviceBuffer, params: &TaskParams) -> Result<TaskOutput> {
        let start = Instant::now();
        let out = compute_on(&WorkerGroup::sequential(), device.as_slice(), params)?;
        pad_to(start, self.costs.compute.for_bytes(device.as_slice().len()));
        Ok(out)
    }

    fn copy_out(&self, output: TaskOutput) -> Result<TaskOutput> {
        let start = Instant::now();
        let bytes = match &output {
            TaskOutput::Digests(d) => d.len() * 16,
            TaskOutput::Windows(w) => w.len() * 17,
        };
        pad_to(start, self.costs.copy_out.for_bytes(bytes));
        Ok(output)
    }
}
