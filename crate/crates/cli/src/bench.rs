//! Benchmark harness: writes a workload through a store in one of four
//! system configurations and records throughput, wire traffic, similarity
//! and pipeline counters per run.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use chunkforge_core::accelerant::{
    BackendKind, OracleMemo, Pipeline, PipelineConfig, PipelineStats, PoolConfig, StageTimes,
};
use chunkforge_core::castore::{FileId, HashEngine, Store, StoreConfig};
use chunkforge_core::chunker::{ChunkingPolicy, PolicyKind};
use chunkforge_core::hashcore::WorkerGroup;
use chunkforge_core::netstore::{Cluster, NodeAddress, Remote, WireTotals};

use crate::workload::WorkloadSpec;

/// Size of each application write call.
pub const WRITE_CALL: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// No content addressing: fixed blocks, no hashing, everything uploaded.
    NonCa,
    /// Hashing inline on the writing thread.
    CaCpu,
    /// Hashing through the pipeline on the CPU backend.
    CaAccel,
    /// Pipeline whose hashing costs nothing after the first sight of an input.
    CaInf,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::NonCa, Mode::CaCpu, Mode::CaAccel, Mode::CaInf];
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "nonca" => Mode::NonCa,
            "cacpu" => Mode::CaCpu,
            "caaccel" => Mode::CaAccel,
            "cainf" | "cainfinite" => Mode::CaInf,
            _ => bail!("unknown mode {s:?} (nonca|cacpu|caaccel|cainf)"),
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::NonCa => "nonca",
            Mode::CaCpu => "cacpu",
            Mode::CaAccel => "caaccel",
            Mode::CaInf => "cainf",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SystemConfig {
    pub mode: Mode,
    pub policy: ChunkingPolicy,
    /// Devices, workers, overlap and pool settings for the pipeline modes.
    /// The backend field is chosen by the mode.
    pub pipeline: PipelineConfig,
    pub store: StoreConfig,
    memo: Arc<OracleMemo>,
}

impl SystemConfig {
    pub fn new(mode: Mode, policy: ChunkingPolicy, pipeline: PipelineConfig, store: StoreConfig) -> Result<Self> {
        policy.validate()?;
        if mode == Mode::NonCa && policy.is_content_defined() {
            bail!("nonca mode writes fixed-size blocks; use --policy fixed");
        }
        if policy.digest != store.digest {
            bail!("policy and store digest parameters differ");
        }
        if let PolicyKind::ContentDefined { max_chunk, .. } = policy.kind {
            if store.write_buffer < max_chunk {
                log::warn!("write buffer {} is smaller than max chunk {max_chunk}", store.write_buffer);
            }
        }
        Ok(SystemConfig { mode, policy, pipeline, store, memo: OracleMemo::new() })
    }

    /// Fresh hashing engine; the pipeline, if any, is returned for stats.
    pub fn engine(&self) -> Result<(HashEngine, Option<Arc<Pipeline>>)> {
        let backend = match self.mode {
            Mode::NonCa => return Ok((HashEngine::None, None)),
            Mode::CaCpu => return Ok((HashEngine::Inline(WorkerGroup::sequential()), None)),
            Mode::CaAccel => BackendKind::CpuParallel,
            Mode::CaInf => BackendKind::InstantOracle(self.memo.clone()),
        };
        let p = Arc::new(Pipeline::start(PipelineConfig { backend, ..self.pipeline.clone() })?);
        Ok((HashEngine::Pipeline(p.clone()), Some(p)))
    }

    pub fn policy_name(&self) -> &'static str {
        if self.policy.is_content_defined() {
            "cdc"
        } else {
            "fixed"
        }
    }
}

/// Where the benchmark writes.
#[derive(Clone, Debug)]
pub enum Target {
    /// A fresh loopback deployment per run with this many nodes.
    InProcess { nodes: usize },
    Remote(NodeAddress),
}

#[derive(Clone, Debug, Default)]
pub struct WriteRecord {
    pub run: usize,
    pub index: usize,
    pub bytes: u64,
    pub seconds: f64,
    pub block_bytes_sent: u64,
    pub metadata_bytes: u64,
    pub uploaded_bytes: u64,
    pub matched_bytes: u64,
    pub similarity: f64,
    /// False for the first version of a file (nothing to compare with).
    pub has_previous: bool,
}

impl WriteRecord {
    pub fn throughput(&self) -> f64 {
        rate(self.bytes, self.seconds)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub run: usize,
    pub files: usize,
    pub bytes: u64,
    pub seconds: f64,
    pub wire: WireTotals,
    pub similarity: f64,
    pub stats: Option<PipelineStats>,
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn throughput(&self) -> f64 {
        rate(self.bytes, self.seconds)
    }
}

fn rate(bytes: u64, seconds: f64) -> f64 {
    if seconds > 0.0 {
        bytes as f64 / seconds
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub mode: Mode,
    pub policy: &'static str,
    pub workload: WorkloadSpec,
    pub runs: Vec<RunRecord>,
    pub writes: Vec<WriteRecord>,
}

impl BenchReport {
    pub fn completed(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.aborted.is_none())
    }

    pub fn mean_throughput(&self) -> f64 {
        mean(self.completed().map(RunRecord::throughput))
    }

    pub fn mean_similarity(&self) -> f64 {
        mean(self.completed().map(|r| r.similarity))
    }
}

pub fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

enum Deployment {
    Local(Cluster),
    Remote(Remote),
}

impl Deployment {
    fn store(&self, config: StoreConfig, engine: HashEngine) -> Result<Store> {
        Ok(match self {
            Deployment::Local(c) => c.store(config, engine)?,
            Deployment::Remote(r) => r.store(config, engine)?,
        })
    }

    fn wire(&self) -> WireTotals {
        match self {
            Deployment::Local(c) => c.wire_totals(),
            Deployment::Remote(r) => r.wire_totals(),
        }
    }
}

/// One untimed warm-up run, then `runs` measured runs. A run that fails is
/// kept in the report, flagged and left out of the means.
pub fn run_bench(spec: &WorkloadSpec, config: &SystemConfig, runs: usize, target: &Target) -> Result<BenchReport> {
    spec.validate()?;
    if runs == 0 {
        bail!("need at least one run");
    }
    let remote = match target {
        Target::Remote(addr) => Some(Remote::connect(addr).with_context(|| format!("connecting to manager {addr}"))?),
        Target::InProcess { .. } => None,
    };
    let deployment = || -> Result<Deployment> {
        Ok(match (target, &remote) {
            (Target::InProcess { nodes }, _) => Deployment::Local(Cluster::loopback(*nodes, config.store.digest)?),
            (Target::Remote(_), Some(r)) => Deployment::Remote(Remote { manager: r.manager.clone(), nodes: r.nodes.clone() }),
            (Target::Remote(_), None) => unreachable!("connected above"),
        })
    };
    let mut report = BenchReport {
        mode: config.mode,
        policy: config.policy_name(),
        workload: *spec,
        runs: Vec::new(),
        writes: Vec::new(),
    };
    // Run ids stay unique on a shared remote deployment.
    let tag = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis());
    for run in 0..=runs {
        let mut writes = Vec::new();
        let run_id = if remote.is_some() { format!("{tag}-{run}") } else { run.to_string() };
        let outcome = deployment().and_then(|d| one_run(spec, config, &d, run, &run_id, &mut writes));
        if run == 0 {
            outcome.context("warm-up run failed")?;
            continue;
        }
        let record = match outcome {
            Ok(r) => r,
            Err(e) => {
                log::warn!("run {run} aborted and excluded from the means: {e:#}");
                RunRecord { run, aborted: Some(format!("{e:#}")), ..RunRecord::default() }
            }
        };
        report.runs.push(record);
        report.writes.extend(writes);
    }
    Ok(report)
}

fn one_run(
    spec: &WorkloadSpec,
    config: &SystemConfig,
    deployment: &Deployment,
    run: usize,
    run_id: &str,
    writes: &mut Vec<WriteRecord>,
) -> Result<RunRecord> {
    let (engine, pipeline) = config.engine()?;
    let store = deployment.store(config.store, engine)?;
    let wire_start = deployment.wire();
    let mut record = RunRecord { run, ..RunRecord::default() };
    let mut busy = Duration::ZERO;
    for (i, file) in spec.files()?.enumerate() {
        let name = FileId::new(spec.file_name(run_id, i))?;
        let before = deployment.wire();
        let t0 = Instant::now();
        let mut session = store.begin_write(name, config.policy)?;
        let has_previous = session.previous().is_some();
        for piece in file.chunks(WRITE_CALL) {
            session.write(piece)?;
        }
        let out = session.commit()?;
        let elapsed = t0.elapsed();
        busy += elapsed;
        let after = deployment.wire();
        writes.push(WriteRecord {
            run,
            index: i,
            bytes: file.len() as u64,
            seconds: elapsed.as_secs_f64(),
            block_bytes_sent: after.block_data_sent - before.block_data_sent,
            metadata_bytes: after.metadata_bytes - before.metadata_bytes,
            uploaded_bytes: out.uploaded_bytes,
            matched_bytes: out.report.matched_bytes,
            similarity: out.report.similarity_ratio,
            has_previous,
        });
        record.files += 1;
        record.bytes += file.len() as u64;
    }
    let end = deployment.wire();
    record.seconds = busy.as_secs_f64();
    record.wire = WireTotals {
        frames_sent: end.frames_sent - wire_start.frames_sent,
        bytes_sent: end.bytes_sent - wire_start.bytes_sent,
        bytes_received: end.bytes_received - wire_start.bytes_received,
        block_data_sent: end.block_data_sent - wire_start.block_data_sent,
        block_data_received: end.block_data_received - wire_start.block_data_received,
        metadata_bytes: end.metadata_bytes - wire_start.metadata_bytes,
    };
    record.similarity = mean(writes.iter().filter(|w| w.run == run && w.has_previous).map(|w| w.similarity));
    if let Some(p) = pipeline {
        record.stats = Some(p.stats());
        p.shutdown();
    }
    Ok(record)
}

/// Pipeline settings from the shared knobs.
pub fn pipeline_config(devices: usize, workers: usize, overlap: bool, reuse: bool) -> PipelineConfig {
    PipelineConfig {
        devices,
        workers_per_device: workers,
        overlap,
        pool: PoolConfig { reuse, ..PoolConfig::default() },
        ..PipelineConfig::default()
    }
}

/// Stage times as seconds in stage order.
pub fn stage_seconds(t: &StageTimes) -> [f64; 5] {
    [t.pre, t.copy_in, t.compute, t.copy_out, t.post].map(|d| d.as_secs_f64())
}
