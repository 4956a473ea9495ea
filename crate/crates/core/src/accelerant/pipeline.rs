//! The master: job queues, the round-robin dispatcher and one manager per
//! device.
//!
//! Submitted jobs wait in a FIFO outstanding queue. The dispatcher pops them
//! in order and hands each to the next device in round-robin order. With
//! overlap enabled a device runs a copy engine and a compute worker: the copy
//! engine performs every copy-in and copy-out for the device on one thread,
//! and up to `slots_per_device` tasks are resident at once, so the copy-in of
//! task k+1 proceeds while task k computes.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TryRecvError};
use parking_lot::{Condvar, Mutex};

use super::backend::{
    pad_to, Backend, CpuParallelBackend, DeviceBuffer, InstantOracleBackend, OracleMemo, SimCosts, SimulatedBackend,
    StageCost,
};
use super::pool::{BufferHandle, BufferPool, PoolConfig};
use super::stats::{PipelineStats, QueueDepths, Stage, StatsInner};
use super::task::{Task, TaskId, TaskOutput, TaskParams, TaskResult, Ticket, TicketState};
use crate::error::{Error, Result};

/// Which backend each device instantiates.
#[derive(Clone)]
pub enum BackendKind {
    CpuParallel,
    InstantOracle(Arc<OracleMemo>),
    Simulated(SimCosts),
}

impl std::fmt::Debug for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendKind::CpuParallel => f.write_str("CpuParallel"),
            BackendKind::InstantOracle(_) => f.write_str("InstantOracle"),
            BackendKind::Simulated(c) => f.debug_tuple("Simulated").field(c).finish(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub devices: usize,
    pub workers_per_device: usize,
    pub overlap: bool,
    /// Device buffers per device; bounds the tasks resident on a device.
    pub slots_per_device: usize,
    /// Job instances created up front in the idle queue.
    pub idle_jobs: usize,
    pub pool: PoolConfig,
    pub backend: BackendKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            devices: 1,
            workers_per_device: 1,
            overlap: true,
            slots_per_device: 2,
            idle_jobs: 8,
            pool: PoolConfig::default(),
            backend: BackendKind::CpuParallel,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::config("device count must be >= 1"));
        }
        if self.workers_per_device == 0 {
            return Err(Error::config("workers per device must be >= 1"));
        }
        if self.slots_per_device == 0 {
            return Err(Error::config("slots per device must be >= 1"));
        }
        self.pool.validate()
    }

    fn build_backends(&self) -> Result<Vec<Arc<dyn Backend>>> {
        (0..self.devices)
            .map(|_| -> Result<Arc<dyn Backend>> {
                Ok(match &self.backend {
                    BackendKind::CpuParallel => Arc::new(CpuParallelBackend::new(self.workers_per_device)?),
                    BackendKind::InstantOracle(memo) => Arc::new(InstantOracleBackend::new(memo.clone())),
                    BackendKind::Simulated(costs) => Arc::new(SimulatedBackend::new(*costs)),
                })
            })
            .collect()
    }

    fn alloc_cost(&self) -> StageCost {
        match &self.backend {
            BackendKind::Simulated(costs) => costs.alloc,
            _ => StageCost::ZERO,
        }
    }
}

type Callback = Box<dyn FnOnce(TaskId, &TaskResult) + Send>;

/// A pre-allocated job instance; it cycles idle -> outstanding -> running -> idle.
#[derive(Debug, Default)]
struct JobShell {
    uses: u64,
}

struct Job {
    id: TaskId,
    shell: JobShell,
    task: Task,
    ticket: Arc<TicketState>,
    callback: Option<Callback>,
    device_buffer: Option<DeviceBuffer>,
    output: Option<Result<TaskOutput>>,
}

#[derive(Default)]
struct JobQueues {
    idle: Vec<JobShell>,
    outstanding: VecDeque<Job>,
    running: HashMap<TaskId, usize>,
    instances: usize,
    next_device: usize,
    shutdown: bool,
}

struct Shared {
    queues: Mutex<JobQueues>,
    work: Condvar,
    stats: Mutex<StatsInner>,
    pool: BufferPool,
    alloc_cost: StageCost,
    next_id: AtomicU64,
    accepting: AtomicBool,
    devices: usize,
}

impl Shared {
    fn record(&self, stage: Stage, d: Duration) {
        self.stats.lock().stage_time.add(stage, d);
    }

    fn add_active(&self, d: Duration) {
        self.stats.lock().device_active += d;
    }

    fn complete(&self, mut job: Job, device: usize) {
        let start = Instant::now();
        if let Err(e) = self.pool.release(job.task.input) {
            log::error!("task {}: releasing staging buffer: {e}", job.id);
        }
        let result: TaskResult = match job.output.take() {
            Some(Ok(out)) => Ok(Arc::new(out)),
            Some(Err(e)) => Err(e.to_string()),
            None => Err("task produced no output".to_string()),
        };
        let failed = result.is_err();
        {
            let mut q = self.queues.lock();
            q.running.remove(&job.id);
            job.shell.uses += 1;
            q.idle.push(job.shell);
        }
        {
            let mut stats = self.stats.lock();
            stats.device_tasks[device] += 1;
            if failed {
                stats.failed += 1;
            } else {
                stats.completed += 1;
            }
        }
        job.ticket.resolve(result.clone());
        if let Some(cb) = job.callback.take() {
            cb(job.id, &result);
        }
        self.record(Stage::Post, start.elapsed());
    }
}

/// Batch-oriented hashing pipeline over one or more devices.
pub struct Pipeline {
    shared: Arc<Shared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    backend_names: Vec<String>,
}

impl Pipeline {
    pub fn start(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let backends = config.build_backends()?;
        Pipeline::with_backends(config, backends)
    }

    /// Starts a pipeline whose devices are the given backend instances;
    /// `config.devices` and `config.backend` are ignored.
    pub fn with_backends(config: PipelineConfig, backends: Vec<Arc<dyn Backend>>) -> Result<Self> {
        config.validate()?;
        if backends.is_empty() {
            return Err(Error::config("at least one backend is required"));
        }
        let devices = backends.len();
        let queues = JobQueues {
            idle: (0..config.idle_jobs).map(|_| JobShell::default()).collect(),
            instances: config.idle_jobs,
            ..JobQueues::default()
        };
        let shared = Arc::new(Shared {
            queues: Mutex::new(queues),
            work: Condvar::new(),
            stats: Mutex::new(StatsInner::new(devices)),
            pool: BufferPool::new(config.pool)?,
            alloc_cost: config.alloc_cost(),
            next_id: AtomicU64::new(1),
            accepting: AtomicBool::new(true),
            devices,
        });

        let mut threads = Vec::new();
        let mut inboxes = Vec::with_capacity(devices);
        let backend_names = backends.iter().map(|b| b.name().to_string()).collect();
        for (index, backend) in backends.into_iter().enumerate() {
            let (tx, rx) = bounded::<Job>(config.slots_per_device);
            inboxes.push(tx);
            let device = DeviceManager { index, backend, shared: shared.clone(), slots: config.slots_per_device };
            let overlap = config.overlap;
            let handle = thread::Builder::new()
                .name(format!("device-{index}"))
                .spawn(move || if overlap { device.run_overlapped(rx) } else { device.run_serial(rx) })
                .map_err(Error::Io)?;
            threads.push(handle);
        }
        let dispatcher_shared = shared.clone();
        let dispatcher = thread::Builder::new()
            .name("dispatcher".into())
            .spawn(move || dispatch(dispatcher_shared, inboxes))
            .map_err(Error::Io)?;
        threads.push(dispatcher);

        Ok(Pipeline { shared, threads: Mutex::new(threads), backend_names })
    }

    pub fn device_count(&self) -> usize {
        self.shared.devices
    }

    pub fn backend_names(&self) -> &[String] {
        &self.backend_names
    }

    pub fn pool(&self) -> &BufferPool {
        &self.shared.pool
    }

    /// Checks out a staging buffer for the caller to fill in place.
    pub fn acquire(&self, size: usize) -> Result<BufferHandle> {
        let start = Instant::now();
        let handle = self.shared.pool.acquire(size)?;
        if handle.was_allocated() {
            pad_to(start, self.shared.alloc_cost.for_bytes(handle.capacity()));
        }
        self.shared.record(Stage::Pre, start.elapsed());
        Ok(handle)
    }

    pub fn release(&self, handle: BufferHandle) -> Result<()> {
        self.shared.pool.release(handle)
    }

    /// Copies `data` into a staging buffer and submits it.
    pub fn submit_bytes(&self, data: &[u8], params: TaskParams) -> Result<Ticket> {
        if !self.shared.accepting.load(Ordering::Acquire) {
            return Err(Error::Shutdown);
        }
        params.validate(data.len())?;
        let mut handle = self.acquire(data.len())?;
        let start = Instant::now();
        handle.fill_from(data)?;
        self.shared.record(Stage::Pre, start.elapsed());
        self.submit(Task { input: handle, params })
    }

    /// Enqueues a task and returns immediately.
    pub fn submit(&self, task: Task) -> Result<Ticket> {
        self.enqueue(task, None)
    }

    /// Like [`submit`](Self::submit); `callback` runs on a device manager
    /// thread when the task completes and must not block.
    pub fn submit_with_callback<F>(&self, task: Task, callback: F) -> Result<Ticket>
    where
        F: FnOnce(TaskId, &TaskResult) + Send + 'static,
    {
        self.enqueue(task, Some(Box::new(callback)))
    }

    fn enqueue(&self, task: Task, callback: Option<Callback>) -> Result<Ticket> {
        if let Err(e) = task.params.validate(task.input.used()) {
            self.shared.pool.release(task.input)?;
            return Err(e);
        }
        let id = self.shared.next_id.fetch_add(1, Ordering::Relaxed);
        let ticket_state = TicketState::new();
        let mut q = self.shared.queues.lock();
        if q.shutdown || !self.shared.accepting.load(Ordering::Acquire) {
            drop(q);
            self.shared.pool.release(task.input)?;
            return Err(Error::Shutdown);
        }
        let shell = q.idle.pop().unwrap_or_else(|| {
            q.instances += 1;
            JobShell::default()
        });
        q.outstanding.push_back(Job {
            id,
            shell,
            task,
            ticket: ticket_state.clone(),
            callback,
            device_buffer: None,
            output: None,
        });
        drop(q);
        self.shared.stats.lock().submitted += 1;
        self.shared.work.notify_one();
        Ok(Ticket::new(id, ticket_state))
    }

    pub fn stats(&self) -> PipelineStats {
        let pool = self.shared.pool.counters();
        let q = self.shared.queues.lock();
        let s = self.shared.stats.lock();
        PipelineStats {
            allocations_total: pool.allocations_total,
            pool_hits: pool.pool_hits,
            submitted: s.submitted,
            completed: s.completed,
            failed: s.failed,
            device_tasks: s.device_tasks.clone(),
            stage_time: s.stage_time,
            device_active: s.device_active,
            overlap_occupancy: s.occupancy(),
            queues: QueueDepths { idle: q.idle.len(), outstanding: q.outstanding.len(), running: q.running.len() },
            job_instances: q.instances,
        }
    }

    /// Stops accepting work, lets queued tasks finish and joins all threads.
    pub fn shutdown(&self) {
        self.shared.accepting.store(false, Ordering::Release);
        self.shared.queues.lock().shutdown = true;
        self.shared.work.notify_all();
        let threads: Vec<_> = self.threads.lock().drain(..).collect();
        for t in threads {
            if t.join().is_err() {
                log::error!("pipeline thread panicked");
            }
        }
    }
}

impl Drop for Pipeline {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn dispatch(shared: Arc<Shared>, inboxes: Vec<Sender<Job>>) {
    loop {
        let (job, device) = {
            let mut q = shared.queues.lock();
            loop {
                if let Some(job) = q.outstanding.pop_front() {
                    let device = q.next_device;
                    q.next_device = (device + 1) % inboxes.len();
                    q.running.insert(job.id, device);
                    break (job, device);
                }
                if q.shutdown {
                    return;
                }
                shared.work.wait(&mut q);
            }
        };
        if let Err(err) = inboxes[device].send(job) {
            let mut job = err.into_inner();
            job.output = Some(Err(Error::Shutdown));
            shared.complete(job, device);
        }
    }
}

struct DeviceManager {
    index: usize,
    backend: Arc<dyn Backend>,
    shared: Arc<Shared>,
    slots: usize,
}

impl DeviceManager {
    fn copy_in(&self, job: &mut Job, buffer: &mut DeviceBuffer) -> Result<()> {
        let start = Instant::now();
        let res = self.backend.copy_in(buffer, job.task.input.as_slice());
        self.shared.record(Stage::CopyIn, start.elapsed());
        res
    }

    fn compute(backend: &dyn Backend, shared: &Shared, job: &mut Job, buffer: &DeviceBuffer) {
        let start = Instant::now();
        job.output = Some(backend.compute(buffer, &job.task.params));
        shared.record(Stage::Compute, start.elapsed());
    }

    fn copy_out(&self, job: &mut Job) {
        if let Some(Ok(out)) = job.output.take_if(|o| o.is_ok()) {
            let start = Instant::now();
            job.output = Some(self.backend.copy_out(out));
            self.shared.record(Stage::CopyOut, start.elapsed());
        }
    }

    /// All three stages back to back on one thread.
    fn run_serial(self, inbox: Receiver<Job>) {
        let mut buffer = DeviceBuffer::default();
        for mut job in inbox {
            let start = Instant::now();
            match self.copy_in(&mut job, &mut buffer) {
                Ok(()) => {
                    Self::compute(self.backend.as_ref(), &self.shared, &mut job, &buffer);
                    self.copy_out(&mut job);
                }
                Err(e) => job.output = Some(Err(e)),
            }
            self.shared.add_active(start.elapsed());
            self.shared.complete(job, self.index);
        }
    }

    /// Copy engine on this thread, compute on a helper thread.
    fn run_overlapped(self, inbox: Receiver<Job>) {
        let (to_compute, compute_rx) = unbounded::<Job>();
        let (computed_tx, computed) = unbounded::<Job>();
        let backend = self.backend.clone();
        let shared = self.shared.clone();
        let compute_thread = thread::Builder::new()
            .name(format!("device-{}-compute", self.index))
            .spawn(move || {
                for mut job in compute_rx {
                    let buffer = job.device_buffer.take().expect("copied in");
                    Self::compute(backend.as_ref(), &shared, &mut job, &buffer);
                    job.device_buffer = Some(buffer);
                    if computed_tx.send(job).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn compute worker");

        let mut free: Vec<DeviceBuffer> = (0..self.slots).map(|_| DeviceBuffer::default()).collect();
        let mut in_flight = 0usize;
        let mut inbox_open = true;
        let mut active_since = Instant::now();
        loop {
            // Copy in while a slot is free and work is ready; only block for
            // new work when the device is empty.
            if inbox_open && in_flight < self.slots {
                let next = if in_flight == 0 {
                    match inbox.recv() {
                        Ok(job) => Some(job),
                        Err(_) => {
                            inbox_open = false;
                            None
                        }
                    }
                } else {
                    match inbox.try_recv() {
                        Ok(job) => Some(job),
                        Err(TryRecvError::Empty) => None,
                        Err(TryRecvError::Disconnected) => {
                            inbox_open = false;
                            None
                        }
                    }
                };
                if let Some(mut job) = next {
                    if in_flight == 0 {
                        active_since = Instant::now();
                    }
                    let mut buffer = free.pop().expect("free slot");
                    match self.copy_in(&mut job, &mut buffer) {
                        Ok(()) => {
                            job.device_buffer = Some(buffer);
                            in_flight += 1;
                            to_compute.send(job).expect("compute worker alive");
                        }
                        Err(e) => {
                            free.push(buffer);
                            job.output = Some(Err(e));
                            if in_flight == 0 {
                                self.shared.add_active(active_since.elapsed());
                            }
                            self.shared.complete(job, self.index);
                        }
                    }
                    continue;
                }
            }
            if in_flight == 0 {
                if inbox_open {
                    continue;
                }
                break;
            }
            let mut job = computed.recv().expect("compute worker alive");
            free.push(job.device_buffer.take().expect("device buffer"));
            self.copy_out(&mut job);
            in_flight -= 1;
            if in_flight == 0 {
                self.shared.add_active(active_since.elapsed());
            }
            self.shared.complete(job, self.index);
        }
        drop(to_compute);
        let _ = compute_thread.join();
    }
}
