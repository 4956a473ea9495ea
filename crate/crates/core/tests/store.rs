mod common;

use std::collections::HashSet;
use std::sync::Arc;
use std::thread;

use chunkforge_core::accelerant::{Pipeline, PipelineConfig};
use chunkforge_core::castore::{BlockMap, BlockService, FileId, HashEngine, MetadataService, Store, StoreConfig};
use chunkforge_core::chunker::{chunk_whole, ChunkingPolicy};
use chunkforge_core::hashcore::{direct_hash, Algorithm, SegmentedHashParams, WindowHashParams, WorkerGroup};
use chunkforge_core::netstore::{upload_striped, Cluster, NodeConfig, NodeService};
use chunkforge_core::Error;
use common::random_bytes;

fn digest_params() -> SegmentedHashParams {
    SegmentedHashParams::new(4096, Algorithm::Md5).unwrap()
}

fn cdc() -> ChunkingPolicy {
    let window = WindowHashParams { window: 32, stride: 1, boundary_bits: 10, ..WindowHashParams::default() };
    ChunkingPolicy::content_defined(window, 2048, 16 * 1024).unwrap().with_digest(digest_params()).unwrap()
}

fn fixed() -> ChunkingPolicy {
    ChunkingPolicy::fixed(4096).unwrap().with_digest(digest_params()).unwrap()
}

fn config(write_buffer: usize) -> StoreConfig {
    StoreConfig { write_buffer, stripe_width: 4, digest: digest_params(), ..StoreConfig::default() }
}

fn engines() -> Vec<HashEngine> {
    let pipeline = Pipeline::start(PipelineConfig { devices: 2, ..PipelineConfig::default() }).unwrap();
    vec![HashEngine::Inline(WorkerGroup::global()), HashEngine::Pipeline(Arc::new(pipeline))]
}

fn id(s: &str) -> FileId {
    FileId::new(s).unwrap()
}

fn write(store: &Store, file: &str, policy: ChunkingPolicy, data: &[u8], step: usize) -> chunkforge_core::castore::CommitOutcome {
    let mut s = store.begin_write(id(file), policy).unwrap();
    for piece in data.chunks(step.max(1)) {
        s.write(piece).unwrap();
    }
    s.commit().unwrap()
}

#[test]
fn round_trip_all_engines_and_policies() {
    let cluster = Cluster::loopback(4, digest_params()).unwrap();
    for (e, engine) in engines().into_iter().enumerate() {
        let store = cluster.store(config(64 * 1024), engine).unwrap();
        for (p, policy) in [fixed(), cdc()].into_iter().enumerate() {
            for (k, len) in [0usize, 1, 4095, 4096, 100_000, 300_001].into_iter().enumerate() {
                let data = random_bytes(len, (e * 100 + p * 10 + k) as u64);
                let name = format!("f{e}-{p}-{k}");
                let out = write(&store, &name, policy, &data, 7777);
                assert_eq!(out.map.file_size(), len as u64);
                assert_eq!(out.map.blocks, block_records(&data, &policy));
                assert_eq!(store.read(&id(&name)).unwrap(), data);
            }
        }
    }
}

fn block_records(data: &[u8], policy: &ChunkingPolicy) -> Vec<chunkforge_core::castore::BlockRecord> {
    chunk_whole(data, policy)
        .unwrap()
        .into_iter()
        .map(|c| chunkforge_core::castore::BlockRecord { offset: c.offset, length: c.length as u32, digest: c.digest })
        .collect()
}

#[test]
fn block_map_independent_of_write_sizes_and_buffer() {
    let data = random_bytes(200_000, 77);
    let mut maps: Vec<BlockMap> = Vec::new();
    for (i, (buffer, step)) in [(16 * 1024, 1usize << 20), (64 * 1024, 4096), (1 << 20, 13), (20_000, 8192)].into_iter().enumerate() {
        for engine in engines() {
            let cluster = Cluster::loopback(4, digest_params()).unwrap();
            let store = cluster.store(config(buffer), engine).unwrap();
            let mut map = write(&store, "f", cdc(), &data, step).map;
            map.locations = None;
            maps.push(map);
        }
        assert!(maps.windows(2).all(|w| w[0] == w[1]), "case {i}");
    }
}

#[test]
fn identical_rewrite_moves_no_block_data() {
    let cluster = Cluster::loopback(4, digest_params()).unwrap();
    let store = cluster.store(config(64 * 1024), HashEngine::Inline(WorkerGroup::global())).unwrap();
    let data = random_bytes(150_000, 1);
    let first = write(&store, "f", cdc(), &data, 50_000);
    assert_eq!(first.report.matched_blocks, 0);
    assert_eq!(cluster.wire_totals().block_data_sent, data.len() as u64);
    for v in 2..=4u64 {
        cluster.reset_counters();
        let out = write(&store, "f", cdc(), &data, 50_000);
        assert_eq!(out.map.version, v);
        assert_eq!(out.report.matched_blocks, out.report.total_blocks);
        assert_eq!((out.report.new_bytes, out.uploaded_blocks), (0, 0));
        let t = cluster.wire_totals();
        assert_eq!(t.block_data_sent, 0);
        assert_eq!(t.bytes_sent + t.bytes_received, t.metadata_bytes);
    }
    assert_eq!(store.read(&id("f")).unwrap(), data);
}

#[test]
fn uploads_exactly_the_absent_blocks() {
    let cluster = Cluster::loopback(4, digest_params()).unwrap();
    let store = cluster.store(config(32 * 1024), HashEngine::Inline(WorkerGroup::global())).unwrap();
    let base = random_bytes(120_000, 2);
    let v1 = write(&store, "f", cdc(), &base, 9999);
    let mut next = base.clone();
    next.splice(60_000..60_000, random_bytes(500, 3));
    next.truncate(110_000);
    cluster.reset_counters();
    let v2 = write(&store, "f", cdc(), &next, 9999);

    let old: HashSet<_> = v1.map.blocks.iter().map(|b| b.digest).collect();
    let mut seen = HashSet::new();
    let absent: u64 = v2
        .map
        .blocks
        .iter()
        .filter(|b| !old.contains(&b.digest) && seen.insert(b.digest))
        .map(|b| b.length as u64)
        .sum();
    assert!(absent > 0);
    assert_eq!(v2.uploaded_bytes, absent);
    assert_eq!(cluster.wire_totals().block_data_sent, absent);
    assert_eq!(v2.report.new_bytes + v2.report.matched_bytes, next.len() as u64);
    assert!(v2.report.similarity_ratio > 0.8);
    assert_eq!(store.read(&id("f")).unwrap(), next);
}

#[test]
fn completely_different_content_matches_nothing() {
    let cluster = Cluster::loopback(4, digest_params()).unwrap();
    let store = cluster.store(config(64 * 1024), HashEngine::Inline(WorkerGroup::global())).unwrap();
    write(&store, "f", fixed(), &random_bytes(80_000, 1), 80_000);
    let out = write(&store, "f", fixed(), &random_bytes(80_000, 2), 80_000);
    assert_eq!(out.report.matched_blocks, 0);
    assert_eq!(out.uploaded_bytes, 80_000);
}

#[test]
fn single_writer_per_file() {
    let cluster = Cluster::loopback(4, digest_params()).unwrap();
    let store = cluster.store(config(64 * 1024), HashEngine::Inline(WorkerGroup::global())).unwrap();
    let s = store.begin_write(id("f"), cdc()).unwrap();
    assert!(s.previous().is_none());
    assert!(matches!(store.begin_write(id("f"), cdc()), Err(Error::Conflict(_))));
    let other = store.begin_write(id("g"), cdc()).unwrap();
    drop(s);
    drop(other);
    let s = store.begin_write(id("f"), cdc()).unwrap();
    s.commit().unwrap();
    assert_eq!(store.begin_write(id("f"), cdc()).unwrap().previous().unwrap().version, 1);
}

#[test]
fn read_errors() {
    let cluster = Cluster::loopback(4, digest_params()).unwrap();
    let store = cluster.store(config(64 * 1024), HashEngine::Inline(WorkerGroup::global())).unwrap();
    assert!(matches!(store.read(&id("nope")), Err(Error::NotFound(_))));
    let out = write(&store, "f", cdc(), &random_bytes(100_000, 4), 100_000);
    let victim = out.map.blocks[1].digest;
    let holder = cluster.nodes.iter().find(|n| n.has_block(&victim).unwrap()).unwrap();
    holder.corrupt(&victim).unwrap();
    assert!(matches!(store.read(&id("f")), Err(Error::Integrity(_))));
}

#[test]
fn failed_commit_leaves_previous_version() {
    let cluster = Cluster::loopback(2, digest_params()).unwrap();
    let small = Arc::new(NodeService::new(NodeConfig { capacity: Some(50_000), digest: digest_params(), ..NodeConfig::default() }).unwrap());
    let nodes: Vec<Arc<dyn BlockService>> = vec![small.clone(), cluster.nodes[1].clone()];
    let cfg = StoreConfig { stripe_width: 2, ..config(64 * 1024) };
    let store = Store::new(cluster.manager.clone(), nodes, cfg, HashEngine::Inline(WorkerGroup::global())).unwrap();
    let v1 = random_bytes(40_000, 5);
    write(&store, "f", fixed(), &v1, 40_000);
    let mut s = store.begin_write(id("f"), fixed()).unwrap();
    s.write(&random_bytes(200_000, 6)).unwrap();
    assert!(matches!(s.commit(), Err(Error::Capacity(_))));
    assert_eq!(cluster.manager.get_blockmap(&id("f")).unwrap().unwrap().version, 1);
    assert_eq!(store.read(&id("f")).unwrap(), v1);
}

#[test]
fn racing_commits_one_winner() {
    let cluster = Cluster::loopback(1, digest_params()).unwrap();
    let meta = cluster.metadata();
    meta.put_blockmap(&BlockMap::new(id("f"), 1, vec![]).unwrap(), None).unwrap();
    let results: Vec<_> = thread::scope(|s| {
        let hs: Vec<_> = (0..8)
            .map(|_| {
                let meta = meta.clone();
                s.spawn(move || meta.put_blockmap(&BlockMap::new(id("f"), 2, vec![]).unwrap(), Some(1)))
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results.iter().filter_map(|r| r.as_ref().err()).all(|e| matches!(e, Error::Conflict(_))));
}

#[test]
fn striped_placement_and_counters() {
    let cluster = Cluster::loopback(4, digest_params()).unwrap();
    let data: Vec<Vec<u8>> = (0..8).map(|k| random_bytes(1000 + k * 10, k as u64)).collect();
    let blocks: Vec<_> = data.iter().map(|d| (direct_hash(d, &digest_params()).unwrap(), d.as_slice())).collect();
    let placement = upload_striped(&blocks, &cluster.block_services(), 4).unwrap();
    assert_eq!(placement, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    for (k, (d, _)) in blocks.iter().enumerate() {
        assert!(cluster.nodes[k % 4].has_block(d).unwrap());
    }
    assert!(cluster.nodes.iter().all(|n| n.block_count() == 2));
    let per_node: u64 = cluster.node_totals().iter().map(|t| t.block_data_sent).sum();
    assert_eq!(per_node, data.iter().map(|d| d.len() as u64).sum::<u64>());

    assert_eq!(upload_striped(&blocks, &cluster.block_services(), 1).unwrap(), vec![0; 8]);
    assert!(upload_striped(&blocks, &cluster.block_services(), 5).is_err());
}

#[test]
fn concurrent_puts_store_one_copy() {
    let node = Arc::new(NodeService::in_memory(digest_params()));
    let data = random_bytes(5000, 9);
    let d = direct_hash(&data, &digest_params()).unwrap();
    thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| node.put_block(&d, &data).unwrap());
        }
    });
    assert_eq!((node.block_count(), node.used_bytes()), (1, 5000));
}

#[test]
fn non_content_addressed_mode_uploads_everything() {
    let cluster = Cluster::loopback(4, digest_params()).unwrap();
    let store = cluster.store(config(64 * 1024), HashEngine::None).unwrap();
    assert!(matches!(store.begin_write(id("f"), cdc()), Err(Error::Config(_))));
    let data = random_bytes(100_000, 10);
    for v in 1..=2 {
        cluster.reset_counters();
        let out = write(&store, "f", fixed(), &data, 30_000);
        assert_eq!(out.map.version, v);
        assert_eq!(out.report.matched_blocks, 0);
        assert_eq!(cluster.wire_totals().block_data_sent, data.len() as u64);
        assert!(out.map.blocks.iter().all(|b| b.digest.algorithm() == Algorithm::Opaque));
    }
    assert_eq!(store.read(&id("f")).unwrap(), data);
}

#[test]
fn policy_digest_must_match_store() {
    let cluster = Cluster::loopback(1, digest_params()).unwrap();
    let store = cluster.store(StoreConfig { stripe_width: 1, ..config(4096) }, HashEngine::Inline(WorkerGroup::global())).unwrap();
    assert!(matches!(store.begin_write(id("f"), ChunkingPolicy::fixed(100).unwrap()), Err(Error::Config(_))));
}

#[test]
fn socket_mode_round_trip_and_corruption() {
    let cluster = Cluster::sockets(4, digest_params()).unwrap();
    assert_eq!(cluster.remote.nodes.len(), 4);
    let store = cluster.store(config(64 * 1024), engines().pop().unwrap()).unwrap();
    let mut maps = Vec::new();
    for (k, policy) in [fixed(), cdc()].into_iter().enumerate() {
        let data = random_bytes(250_000, 50 + k as u64);
        let name = format!("s{k}");
        maps.push(write(&store, &name, policy, &data, 10_000).map);
        assert_eq!(store.read(&id(&name)).unwrap(), data);
    }
    let victim = maps[1].blocks[0].digest;
    let holder = cluster.nodes.iter().find(|n| n.has_block(&victim).unwrap()).unwrap();
    holder.corrupt(&victim).unwrap();
    assert!(matches!(store.read(&id("s1")), Err(Error::Integrity(_))));
    assert_eq!(store.read(&id("s0")).unwrap().len(), 250_000);
}
