//! Shared settings. Every knob can come from a flag, a `CHUNKFORGE_*`
//! environment variable or a `key = value` config file, in that order of
//! precedence, before falling back to the default.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chunkforge_core::castore::StoreConfig;
use chunkforge_core::chunker::ChunkingPolicy;
use chunkforge_core::hashcore::{Algorithm, SegmentedHashParams, WindowHashParams};
use chunkforge_core::netstore::NodeAddress;
use clap::Args;

use crate::bench::{pipeline_config, Mode, SystemConfig};
use crate::workload::{EditMix, WorkloadKind, WorkloadSpec};

#[derive(Args, Debug, Clone, Default)]
pub struct Knobs {
    /// Chunking policy: fixed or cdc.
    #[arg(long, env = "CHUNKFORGE_POLICY")]
    pub policy: Option<String>,
    /// Fixed-policy block size (accepts K/M/G suffixes).
    #[arg(long, env = "CHUNKFORGE_BLOCK_SIZE")]
    pub block_size: Option<String>,
    /// Window size in bytes for content-defined chunking.
    #[arg(long, env = "CHUNKFORGE_WINDOW")]
    pub window: Option<String>,
    #[arg(long, env = "CHUNKFORGE_BOUNDARY_BITS")]
    pub boundary_bits: Option<String>,
    #[arg(long, env = "CHUNKFORGE_BOUNDARY_TARGET")]
    pub boundary_target: Option<String>,
    /// Distance between evaluated windows.
    #[arg(long, env = "CHUNKFORGE_STRIDE")]
    pub stride: Option<String>,
    #[arg(long, env = "CHUNKFORGE_MIN_CHUNK")]
    pub min_chunk: Option<String>,
    #[arg(long, env = "CHUNKFORGE_MAX_CHUNK")]
    pub max_chunk: Option<String>,
    /// Segment size of the block digest.
    #[arg(long, env = "CHUNKFORGE_SEGMENT_SIZE")]
    pub segment_size: Option<String>,
    /// Hash algorithm for windows and blocks: md5 or sha256.
    #[arg(long, env = "CHUNKFORGE_ALGORITHM")]
    pub algorithm: Option<String>,
    /// nonca, cacpu, caaccel or cainf.
    #[arg(long, env = "CHUNKFORGE_MODE")]
    pub mode: Option<String>,
    /// Pipeline devices.
    #[arg(long, env = "CHUNKFORGE_DEVICES")]
    pub devices: Option<String>,
    /// Hashing threads per device.
    #[arg(long, env = "CHUNKFORGE_WORKERS")]
    pub workers: Option<String>,
    /// Copy/compute overlap: on or off.
    #[arg(long, env = "CHUNKFORGE_OVERLAP")]
    pub overlap: Option<String>,
    /// Staging buffer reuse: on or off.
    #[arg(long, env = "CHUNKFORGE_REUSE")]
    pub reuse: Option<String>,
    /// Write buffer: bytes collected before hashing.
    #[arg(long, env = "CHUNKFORGE_BATCH")]
    pub batch: Option<String>,
    /// Bytes of windows per pipeline scan task.
    #[arg(long, env = "CHUNKFORGE_SCAN_PIECE")]
    pub scan_piece: Option<String>,
    /// Scan tasks in flight ahead of the boundary search.
    #[arg(long, env = "CHUNKFORGE_SCAN_LOOKAHEAD")]
    pub scan_lookahead: Option<String>,
    /// Storage nodes written in parallel.
    #[arg(long, env = "CHUNKFORGE_STRIPE")]
    pub stripe: Option<String>,
    /// Manager address host:port.
    #[arg(long, env = "CHUNKFORGE_MANAGER")]
    pub manager: Option<String>,
    #[arg(long, env = "CHUNKFORGE_SEED")]
    pub seed: Option<String>,
    #[arg(long, env = "CHUNKFORGE_RUNS")]
    pub runs: Option<String>,
    /// Output path.
    #[arg(long, env = "CHUNKFORGE_OUT")]
    pub out: Option<String>,
    /// different, similar or checkpoint.
    #[arg(long, env = "CHUNKFORGE_WORKLOAD")]
    pub workload: Option<String>,
    #[arg(long, env = "CHUNKFORGE_FILE_SIZE")]
    pub file_size: Option<String>,
    #[arg(long, env = "CHUNKFORGE_FILES")]
    pub files: Option<String>,
    /// Fraction of each checkpoint version edited.
    #[arg(long, env = "CHUNKFORGE_MUTATION_RATE")]
    pub mutation_rate: Option<String>,
    /// Edit weights insert:delete:overwrite.
    #[arg(long, env = "CHUNKFORGE_EDIT_MIX")]
    pub edit_mix: Option<String>,
    /// key = value settings file.
    #[arg(long, env = "CHUNKFORGE_CONFIG")]
    pub config: Option<PathBuf>,
}

impl Knobs {
    fn flag(&self, key: &str) -> Option<&String> {
        match key {
            "policy" => self.policy.as_ref(),
            "block-size" => self.block_size.as_ref(),
            "window" => self.window.as_ref(),
            "boundary-bits" => self.boundary_bits.as_ref(),
            "boundary-target" => self.boundary_target.as_ref(),
            "stride" => self.stride.as_ref(),
            "min-chunk" => self.min_chunk.as_ref(),
            "max-chunk" => self.max_chunk.as_ref(),
            "segment-size" => self.segment_size.as_ref(),
            "algorithm" => self.algorithm.as_ref(),
            "mode" => self.mode.as_ref(),
            "devices" => self.devices.as_ref(),
            "workers" => self.workers.as_ref(),
            "overlap" => self.overlap.as_ref(),
            "reuse" => self.reuse.as_ref(),
            "batch" => self.batch.as_ref(),
            "scan-piece" => self.scan_piece.as_ref(),
            "scan-lookahead" => self.scan_lookahead.as_ref(),
            "stripe" => self.stripe.as_ref(),
            "manager" => self.manager.as_ref(),
            "seed" => self.seed.as_ref(),
            "runs" => self.runs.as_ref(),
            "out" => self.out.as_ref(),
            "workload" => self.workload.as_ref(),
            "file-size" => self.file_size.as_ref(),
            "files" => self.files.as_ref(),
            "mutation-rate" => self.mutation_rate.as_ref(),
            "edit-mix" => self.edit_mix.as_ref(),
            _ => None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "policy",
    "block-size",
    "window",
    "boundary-bits",
    "boundary-target",
    "stride",
    "min-chunk",
    "max-chunk",
    "segment-size",
    "algorithm",
    "mode",
    "devices",
    "workers",
    "overlap",
    "reuse",
    "batch",
    "scan-piece",
    "scan-lookahead",
    "stripe",
    "manager",
    "seed",
    "runs",
    "out",
    "workload",
    "file-size",
    "files",
    "mutation-rate",
    "edit-mix",
];

/// Parses `key = value` lines. `#` starts a comment; keys may use `-` or
/// `_`.
pub fn parse_config_file(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else { bail!("line {}: expected key = value", n + 1) };
        let key = k.trim().replace('_', "-").to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            bail!("line {}: unknown key {key:?}", n + 1);
        }
        out.insert(key, v.trim().trim_matches('"').to_string());
    }
    Ok(out)
}

/// Parses a byte count with an optional K, M or G (binary) suffix.
pub fn parse_size(s: &str) -> Result<usize> {
    let s = s.trim();
    let (digits, shift) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let shift = match c.to_ascii_uppercase() {
                'K' => 10,
                'M' => 20,
                'G' => 30,
                _ => bail!("bad size suffix in {s:?}"),
            };
            (&s[..i], shift)
        }
        _ => (s, 0),
    };
    let n: usize = digits.trim().parse().with_context(|| format!("bad size {s:?}"))?;
    n.checked_mul(1 << shift).with_context(|| format!("size {s:?} overflows"))
}

fn parse_switch(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => bail!("expected on or off, got {s:?}"),
    }
}

/// Fully resolved settings.
#[derive(Clone, Debug)]
pub struct Settings {
    pub policy: ChunkingPolicy,
    pub mode: Mode,
    pub devices: usize,
    pub workers: usize,
    pub overlap: bool,
    pub reuse: bool,
    pub batch: usize,
    pub scan_piece: usize,
    pub scan_lookahead: usize,
    pub stripe: usize,
    pub manager: Option<NodeAddress>,
    pub seed: u64,
    pub runs: usize,
    pub out: Option<PathBuf>,
    pub workload: WorkloadSpec,
}

struct Lookup<'a> {
    knobs: &'a Knobs,
    file: HashMap<String, String>,
}

impl Lookup<'_> {
    fn raw(&self, key: &str) -> Option<String> {
        self.knobs.flag(key).cloned().or_else(|| self.file.get(key).cloned())
    }

    fn get<T>(&self, key: &str, default: T, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        match self.raw(key) {
            Some(v) => parse(&v).with_context(|| format!("invalid --{key} {v:?}")),
            None => Ok(default),
        }
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::error::Error + Send + Sync + 'static,
    {
        self.get(key, default, |s| Ok(s.trim().parse::<T>()?))
    }
}

impl Settings {
    pub fn resolve(knobs: &Knobs) -> Result<Settings> {
        let file = match &knobs.config {
            Some(path) => load_file(path)?,
            None => HashMap::new(),
        };
        let l = Lookup { knobs, file };

        let algorithm = l.get("algorithm", Algorithm::Md5, |s| Ok(Algorithm::parse(s)?))?;
        let digest = SegmentedHashParams::new(l.get("segment-size", 64 << 10, parse_size)?, algorithm)?;
        let cdc = l.get("policy", true, |s| match s {
            "cdc" | "content-defined" => Ok(true),
            "fixed" => Ok(false),
            _ => bail!("expected fixed or cdc"),
        })?;
        let default_cdc = ChunkingPolicy::default_cdc();
        let (dw, dmin, dmax) = match default_cdc.kind {
            chunkforge_core::chunker::PolicyKind::ContentDefined { window, min_chunk, max_chunk } => (window, min_chunk, max_chunk),
            _ => unreachable!("default_cdc is content-defined"),
        };
        let policy = if cdc {
            let window = WindowHashParams {
                window: l.get("window", dw.window, parse_size)?,
                stride: l.get("stride", dw.stride, parse_size)?,
                boundary_bits: l.num("boundary-bits", dw.boundary_bits)?,
                boundary_target: l.num("boundary-target", dw.boundary_target)?,
                algorithm,
            };
            ChunkingPolicy::content_defined(window, l.get("min-chunk", dmin, parse_size)?, l.get("max-chunk", dmax, parse_size)?)?
        } else {
            ChunkingPolicy::fixed(l.get("block-size", 1 << 20, parse_size)?)?
        }
        .with_digest(digest)?;

        let workers_default = std::thread::available_parallelism().map_or(1, |n| n.get());
        let seed = l.num("seed", 1u64)?;
        let workload = WorkloadSpec {
            kind: l.get("workload", WorkloadKind::Similar, |s| s.parse())?,
            file_size: l.get("file-size", 16 << 20, parse_size)?,
            file_count: l.num("files", 10usize)?,
            mutation_rate: l.num("mutation-rate", 0.01f64)?,
            mix: l.get("edit-mix", EditMix::default(), |s| s.parse())?,
            seed,
        };
        workload.validate()?;
        let settings = Settings {
            policy,
            mode: l.get("mode", Mode::CaAccel, |s| s.parse())?,
            devices: l.num("devices", 1usize)?,
            workers: l.num("workers", workers_default)?,
            overlap: l.get("overlap", true, parse_switch)?,
            reuse: l.get("reuse", true, parse_switch)?,
            batch: l.get("batch", 4 << 20, parse_size)?,
            scan_piece: l.get("scan-piece", StoreConfig::default().scan_piece, parse_size)?,
            scan_lookahead: l.num("scan-lookahead", StoreConfig::default().scan_lookahead)?,
            stripe: l.num("stripe", 4usize)?,
            manager: l.raw("manager").map(|m| NodeAddress::parse(&m)).transpose()?,
            seed,
            runs: l.num("runs", 10usize)?,
            out: l.raw("out").map(PathBuf::from),
            workload,
        };
        let counts = [settings.devices, settings.workers, settings.stripe, settings.batch, settings.scan_piece, settings.scan_lookahead];
        if counts.contains(&0) {
            bail!("devices, workers, stripe, batch, scan-piece and scan-lookahead must be > 0");
        }
        Ok(settings)
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            write_buffer: self.batch,
            stripe_width: self.stripe,
            digest: self.policy.digest,
            scan_piece: self.scan_piece,
            scan_lookahead: self.scan_lookahead,
        }
    }

    pub fn system(&self) -> Result<SystemConfig> {
        SystemConfig::new(
            self.mode,
            self.policy,
            pipeline_config(self.devices, self.workers, self.overlap, self.reuse),
            self.store_config(),
        )
    }
}

fn load_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config_file(&text).with_context(|| format!("in config {}", path.display()))
}
