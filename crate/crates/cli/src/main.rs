use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chunkforge_cli::bench::{run_bench, Mode, Target, WRITE_CALL};
use chunkforge_cli::config::{Knobs, Settings};
use chunkforge_cli::report::write_report;
use chunkforge_core::castore::{FileId, MetadataService};
use chunkforge_core::netstore::{
    Connection, ManagerClient, ManagerService, NodeAddress, NodeConfig, NodeService, NodeStorage, Remote, Server,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chunkforge", version, about = "Content-addressable block store with a batched hashing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the metadata manager.
    ServeManager {
        #[arg(long, default_value = "127.0.0.1:7400", env = "CHUNKFORGE_LISTEN")]
        listen: String,
    },
    /// Run a storage node and register it with the manager.
    ServeNode {
        #[arg(long, default_value = "127.0.0.1:0", env = "CHUNKFORGE_LISTEN")]
        listen: String,
        /// Host other processes use to reach this node.
        #[arg(long, default_value = "127.0.0.1", env = "CHUNKFORGE_ADVERTISE")]
        advertise: String,
        /// Block directory; blocks are kept in memory when absent.
        #[arg(long, env = "CHUNKFORGE_DIR")]
        dir: Option<PathBuf>,
        /// Byte budget for stored blocks.
        #[arg(long, env = "CHUNKFORGE_CAPACITY")]
        capacity: Option<String>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Write a local file (or stdin with `-`) as a new version of FILE_ID.
    Put {
        file_id: String,
        path: PathBuf,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Read the latest version of FILE_ID to --out or stdout.
    Get {
        file_id: String,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Run a workload and write the CSV report.
    Bench {
        #[command(flatten)]
        knobs: Knobs,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ServeManager { listen } => {
            let server = Server::spawn(&listen, Arc::new(ManagerService::new()))?;
            log::info!("manager listening on {}", server.local_addr());
            server.join();
        }
        Command::ServeNode { listen, advertise, dir, capacity, knobs } => {
            let s = Settings::resolve(&knobs)?;
            let manager = s.manager.context("serve-node needs --manager")?;
            let config = NodeConfig {
                storage: dir.map_or(NodeStorage::Memory, NodeStorage::Directory),
                capacity: capacity.map(|c| chunkforge_cli::config::parse_size(&c)).transpose()?.map(|c| c as u64),
                digest: s.policy.digest,
            };
            let server = Server::spawn(&listen, Arc::new(NodeService::new(config)?))?;
            let me = NodeAddress::new(advertise, server.local_addr().port());
            let index = ManagerClient::new(Connection::tcp(&manager)).register_node(&me)?;
            log::info!("node {me} registered with {manager} as #{index}");
            server.join();
        }
        Command::Put { file_id, path, knobs } => {
            let s = Settings::resolve(&knobs)?;
            let remote = connect(&s)?;
            let store = remote.store(s.store_config(), s.system()?.engine()?.0)?;
            let mut session = store.begin_write(FileId::new(file_id)?, s.policy)?;
            let mut input: Box<dyn Read> = if path.as_os_str() == "-" {
                Box::new(std::io::stdin())
            } else {
                Box::new(std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?)
            };
            let mut buf = vec![0u8; WRITE_CALL];
            loop {
                let n = input.read(&mut buf)?;
                if n == 0 {
                    break;
                }
                session.write(&buf[..n])?;
            }
            let out = session.commit()?;
            println!(
                "version {} bytes {} blocks {} matched {} uploaded {} similarity {:.4}",
                out.map.version,
                out.map.file_size(),
                out.report.total_blocks,
                out.report.matched_blocks,
                out.uploaded_bytes,
                out.report.similarity_ratio
            );
        }
        Command::Get { file_id, knobs } => {
            let s = Settings::resolve(&knobs)?;
            let remote = connect(&s)?;
            let store = remote.store(s.store_config(), s.system()?.engine()?.0)?;
            let data = store.read(&FileId::new(file_id)?)?;
            match &s.out {
                Some(p) => std::fs::write(p, &data).with_context(|| format!("writing {}", p.display()))?,
                None => std::io::stdout().write_all(&data)?,
            }
        }
        Command::Bench { knobs } => {
            let s = Settings::resolve(&knobs)?;
            let target = match &s.manager {
                Some(m) => Target::Remote(m.clone()),
                None => Target::InProcess { nodes: s.stripe },
            };
            let report = run_bench(&s.workload, &s.system()?, s.runs, &target)?;
            let done = report.completed().count();
            println!(
                "{} {} {}: {done}/{} runs, mean {:.1} MB/s, similarity {:.4}",
                report.mode,
                report.policy,
                report.workload.kind,
                report.runs.len(),
                report.mean_throughput() / 1e6,
                report.mean_similarity()
            );
            if let Some(out) = &s.out {
                let (runs, writes) = write_report(out, &report)?;
                println!("wrote {} and {}", runs.display(), writes.display());
            }
        }
    }
    Ok(())
}

fn connect(s: &Settings) -> Result<Remote> {
    let Some(manager) = &s.manager else { bail!("--manager host:port is required") };
    if s.mode == Mode::NonCa && s.policy.is_content_defined() {
        bail!("nonca mode needs --policy fixed");
    }
    let remote = Remote::connect(manager)?;
    if remote.nodes.len() < s.stripe {
        bail!("stripe width {} exceeds the {} registered nodes", s.stripe, remote.nodes.len());
    }
    Ok(remote)
}

