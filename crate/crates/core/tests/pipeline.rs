use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chunkforge_core::accelerant::{
    Backend, BackendKind, DeviceBuffer, OracleMemo, Pipeline, PipelineConfig, PoolConfig, SimCosts, Stage,
    StageCost, Task, TaskOutput, TaskParams,
};
use chunkforge_core::hashcore::{self, Algorithm, SegmentedHashParams, WindowHashParams};
use chunkforge_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0u8; len];
    rng.fill(&mut v[..]);
    v
}

fn direct(len: usize) -> TaskParams {
    TaskParams::Direct { params: SegmentedHashParams::default(), spans: vec![len] }
}

fn sim_pipeline(devices: usize, overlap: bool, costs: SimCosts) -> Pipeline {
    Pipeline::start(PipelineConfig {
        devices,
        overlap,
        backend: BackendKind::Simulated(costs),
        ..PipelineConfig::default()
    })
    .unwrap()
}

#[test]
fn fresh_pipeline_has_zero_stats() {
    let p = Pipeline::start(PipelineConfig { devices: 3, ..PipelineConfig::default() }).unwrap();
    let s = p.stats();
    assert_eq!(s.submitted + s.completed + s.failed + s.allocations_total + s.pool_hits, 0);
    assert_eq!(s.device_tasks, vec![0, 0, 0]);
    assert_eq!(s.stage_time.total(), Duration::ZERO);
}

#[test]
fn round_robin_ten_tasks_two_devices() {
    let p = sim_pipeline(2, true, SimCosts::default());
    let tickets: Vec<_> = (0..10).map(|i| p.submit_bytes(&[i as u8; 64], direct(64)).unwrap()).collect();
    for t in &tickets {
        t.wait().unwrap();
    }
    assert_eq!(p.stats().device_tasks, vec![5, 5]);
}

#[test]
fn round_robin_balance_for_uneven_counts() {
    for (n, m) in [(7usize, 3usize), (12, 4), (1, 2), (9, 5)] {
        let p = sim_pipeline(m, true, SimCosts::default());
        let tickets: Vec<_> = (0..n).map(|i| p.submit_bytes(&[i as u8; 16], direct(16)).unwrap()).collect();
        tickets.iter().for_each(|t| {
            t.wait().unwrap();
        });
        let counts = p.stats().device_tasks;
        assert_eq!(counts.iter().sum::<u64>(), n as u64);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "n={n} m={m} counts={counts:?}");
        if n % m == 0 {
            assert!(counts.iter().all(|&c| c == (n / m) as u64));
        }
    }
}

#[test]
fn concurrent_producers_complete_exactly_once() {
    let p = Arc::new(Pipeline::start(PipelineConfig { devices: 2, ..PipelineConfig::default() }).unwrap());
    let fired = Arc::new((0..1000).map(|_| AtomicU64::new(0)).collect::<Vec<_>>());
    std::thread::scope(|s| {
        for producer in 0..4 {
            let p = p.clone();
            let fired = fired.clone();
            s.spawn(move || {
                let mut tickets = Vec::new();
                for k in 0..250 {
                    let slot = producer * 250 + k;
                    let data = (slot as u32).to_le_bytes();
                    let mut h = p.acquire(4).unwrap();
                    h.fill_from(&data).unwrap();
                    let fired = fired.clone();
                    let t = p
                        .submit_with_callback(Task::direct(h, SegmentedHashParams::default()), move |_, r| {
                            assert!(r.is_ok());
                            fired[slot].fetch_add(1, Ordering::SeqCst);
                        })
                        .unwrap();
                    tickets.push(t);
                }
                for t in tickets {
                    t.wait().unwrap();
                }
            });
        }
    });
    p.shutdown();
    assert!(fired.iter().all(|c| c.load(Ordering::SeqCst) == 1));
    let s = p.stats();
    assert_eq!((s.submitted, s.completed, s.failed), (1000, 1000, 0));
}

#[test]
fn submit_after_shutdown_is_rejected() {
    let p = Pipeline::start(PipelineConfig::default()).unwrap();
    p.shutdown();
    let called = Arc::new(AtomicU64::new(0));
    let c = called.clone();
    let mut h = p.pool().acquire(8).unwrap();
    h.fill_from(b"12345678").unwrap();
    let r = p.submit_with_callback(Task::direct(h, SegmentedHashParams::default()), move |_, _| {
        c.fetch_add(1, Ordering::SeqCst);
    });
    assert!(matches!(r, Err(Error::Shutdown)));
    assert!(matches!(p.submit_bytes(b"x", direct(1)), Err(Error::Shutdown)));
    assert_eq!(called.load(Ordering::SeqCst), 0);
    assert_eq!(p.pool().counters().checked_out, 0);
}

#[test]
fn direct_hash_task_matches_hashcore() {
    let data = random_bytes(1 << 20, 1);
    let params = SegmentedHashParams::new(64 * 1024, Algorithm::Md5).unwrap();
    let p = Pipeline::start(PipelineConfig { workers_per_device: 2, ..PipelineConfig::default() }).unwrap();
    let t = p.submit_bytes(&data, TaskParams::Direct { params, spans: vec![data.len()] }).unwrap();
    let out = t.wait().unwrap();
    assert_eq!(out.digests().unwrap(), &[hashcore::direct_hash(&data, &params).unwrap()]);
    // Cached result on the second wait.
    assert!(Arc::ptr_eq(&out, &t.wait().unwrap()));
}

#[test]
fn window_task_matches_hashcore_and_predicate() {
    let data = random_bytes(20_000, 2);
    let params = WindowHashParams { window: 32, stride: 3, boundary_bits: 4, boundary_target: 5, ..Default::default() };
    for backend in [BackendKind::CpuParallel, BackendKind::InstantOracle(OracleMemo::new())] {
        let p = Pipeline::start(PipelineConfig { backend, ..PipelineConfig::default() }).unwrap();
        let out = p.submit_bytes(&data, TaskParams::Window { params }).unwrap().wait().unwrap();
        let expected = hashcore::window_hashes(&data, &params).unwrap();
        let got = out.windows().unwrap();
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!((g.offset, g.digest), (e.offset, e.digest));
            assert_eq!(g.boundary, hashcore::is_boundary(&e.digest, 4, 5));
        }
    }
}

#[test]
fn batched_direct_spans() {
    let data = random_bytes(10_000, 3);
    let params = SegmentedHashParams::new(1000, Algorithm::Md5).unwrap();
    let p = Pipeline::start(PipelineConfig::default()).unwrap();
    let spans = vec![3000, 1, 6999];
    let out = p.submit_bytes(&data, TaskParams::Direct { params, spans }).unwrap().wait().unwrap();
    let d = out.digests().unwrap();
    assert_eq!(d[0], hashcore::direct_hash(&data[..3000], &params).unwrap());
    assert_eq!(d[1], hashcore::direct_hash(&data[3000..3001], &params).unwrap());
    assert_eq!(d[2], hashcore::direct_hash(&data[3001..], &params).unwrap());
    assert!(p.submit_bytes(&data, TaskParams::Direct { params, spans: vec![5] }).is_err());
}

struct Flaky;

impl Backend for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn copy_in(&self, device: &mut DeviceBuffer, input: &[u8]) -> chunkforge_core::Result<()> {
        if input[0] == 0xEE {
            return Err(Error::Integrity("copy-in rejected".into()));
        }
        device.load(input);
        Ok(())
    }

    fn compute(&self, device: &DeviceBuffer, params: &TaskParams) -> chunkforge_core::Result<TaskOutput> {
        if device.as_slice()[0] == 0xFF {
            return Err(Error::Integrity("compute rejected".into()));
        }
        chunkforge_core::accelerant::compute_on(&hashcore::WorkerGroup::sequential(), device.as_slice(), params)
    }
}

#[test]
fn failed_tasks_do_not_poison_the_queue() {
    for overlap in [true, false] {
        let p = Pipeline::with_backends(PipelineConfig { overlap, ..PipelineConfig::default() }, vec![Arc::new(Flaky)])
            .unwrap();
        let inputs: Vec<u8> = vec![1, 0xFF, 2, 0xEE, 3];
        let tickets: Vec<_> = inputs.iter().map(|&b| p.submit_bytes(&[b; 8], direct(8)).unwrap()).collect();
        for (t, &b) in tickets.iter().zip(&inputs) {
            let r = t.wait();
            if b >= 0xEE {
                let err = r.unwrap_err();
                assert!(matches!(err, Error::TaskFailed { .. }), "{err}");
                assert!(err.to_string().contains("rejected"));
            } else {
                r.unwrap();
            }
        }
        let s = p.stats();
        assert_eq!((s.completed, s.failed), (3, 2));
        assert_eq!(p.pool().counters().checked_out, 0);
    }
}

#[test]
fn pool_reuse_over_a_thousand_tasks() {
    let p = Pipeline::start(PipelineConfig {
        pool: PoolConfig { depth: 4, ..PoolConfig::default() },
        ..PipelineConfig::default()
    })
    .unwrap();
    let mut tickets = Vec::new();
    for i in 0..1000u32 {
        tickets.push(p.submit_bytes(&[(i % 251) as u8; 4096], direct(4096)).unwrap());
    }
    tickets.iter().for_each(|t| {
        t.wait().unwrap();
    });
    let s = p.stats();
    assert!(s.allocations_total <= 4, "{s:?}");
    assert!(s.pool_hits >= 996, "{s:?}");
}

#[test]
fn queues_account_for_every_job_instance() {
    let p = sim_pipeline(1, true, SimCosts::uniform(2, 2, 0));
    let tickets: Vec<_> = (0..20).map(|i| p.submit_bytes(&[i as u8; 8], direct(8)).unwrap()).collect();
    let mid = p.stats();
    assert_eq!(mid.queues.idle + mid.queues.outstanding + mid.queues.running, mid.job_instances);
    tickets.iter().for_each(|t| {
        t.wait().unwrap();
    });
    let end = p.stats();
    assert_eq!(end.queues.outstanding + end.queues.running, 0);
    assert_eq!(end.queues.idle, end.job_instances);
}

fn makespan(overlap: bool, tasks: usize, costs: SimCosts) -> Duration {
    let p = sim_pipeline(1, overlap, costs);
    // Stage the buffers first so only device time is measured.
    p.pool().warm(64, 4).unwrap();
    let start = Instant::now();
    let tickets: Vec<_> = (0..tasks).map(|i| p.submit_bytes(&[i as u8; 64], direct(64)).unwrap()).collect();
    tickets.iter().for_each(|t| {
        t.wait().unwrap();
    });
    start.elapsed()
}

#[test]
fn overlap_hides_copies_behind_compute() {
    let costs = SimCosts::uniform(10, 10, 10);
    let serial = makespan(false, 10, costs);
    let overlapped = makespan(true, 10, costs);
    let ratio = serial.as_secs_f64() / overlapped.as_secs_f64();
    assert!(ratio >= 1.3, "serial {serial:?} overlapped {overlapped:?}");
}

#[test]
fn single_task_gains_nothing_from_overlap() {
    let costs = SimCosts::uniform(10, 10, 10);
    let serial = makespan(false, 1, costs).as_secs_f64();
    let overlapped = makespan(true, 1, costs).as_secs_f64();
    assert!((serial / overlapped - 1.0).abs() < 0.15, "{serial} vs {overlapped}");
}

#[test]
fn allocation_and_copy_in_dominate_small_blocks_without_reuse() {
    let costs = SimCosts {
        alloc: StageCost::millis(3),
        copy_in: StageCost { fixed: Duration::from_millis(1), per_mib: Duration::from_millis(100) },
        compute: StageCost { fixed: Duration::from_micros(50), per_mib: Duration::from_millis(50) },
        copy_out: StageCost::fixed(Duration::from_micros(100)),
    };
    let p = Pipeline::start(PipelineConfig {
        pool: PoolConfig { reuse: false, ..PoolConfig::default() },
        backend: BackendKind::Simulated(costs),
        ..PipelineConfig::default()
    })
    .unwrap();
    let tickets: Vec<_> = (0..10).map(|i| p.submit_bytes(&[i as u8; 4096], direct(4096)).unwrap()).collect();
    tickets.iter().for_each(|t| {
        t.wait().unwrap();
    });
    let s = p.stats();
    assert_eq!(s.allocations_total, 10);
    let share = s.stage_time.fraction(Stage::Pre) + s.stage_time.fraction(Stage::CopyIn);
    assert!(share > 0.7, "pre+copy_in share {share}: {:?}", s.stage_time);
}

#[test]
fn overlap_occupancy_exceeds_one_when_stages_overlap() {
    let p = sim_pipeline(1, true, SimCosts::uniform(5, 5, 5));
    let tickets: Vec<_> = (0..8).map(|i| p.submit_bytes(&[i as u8; 8], direct(8)).unwrap()).collect();
    tickets.iter().for_each(|t| {
        t.wait().unwrap();
    });
    assert!(p.stats().overlap_occupancy > 1.2, "{:?}", p.stats());
}
