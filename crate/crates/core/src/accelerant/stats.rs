use std::time::Duration;

/// The five stages of a task's life.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Host side: staging buffer acquisition (allocation when not pooled) and fill.
    Pre,
    CopyIn,
    Compute,
    CopyOut,
    /// Host side: buffer release, ticket resolution and callback.
    Post,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Pre, Stage::CopyIn, Stage::Compute, Stage::CopyOut, Stage::Post];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::CopyIn => "copy_in",
            Stage::Compute => "compute",
            Stage::CopyOut => "copy_out",
            Stage::Post => "post",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageTimes {
    pub pre: Duration,
    pub copy_in: Duration,
    pub compute: Duration,
    pub copy_out: Duration,
    pub post: Duration,
}

impl StageTimes {
    pub fn get(&self, stage: Stage) -> Duration {
        match stage {
            Stage::Pre => self.pre,
            Stage::CopyIn => self.copy_in,
            Stage::Compute => self.compute,
            Stage::CopyOut => self.copy_out,
            Stage::Post => self.post,
        }
    }

    pub(crate) fn add(&mut self, stage: Stage, d: Duration) {
        let slot = match stage {
            Stage::Pre => &mut self.pre,
            Stage::CopyIn => &mut self.copy_in,
            Stage::Compute => &mut self.compute,
            Stage::CopyOut => &mut self.copy_out,
            Stage::Post => &mut self.post,
        };
        *slot += d;
    }

    pub fn total(&self) -> Duration {
        Stage::ALL.iter().map(|&s| self.get(s)).sum()
    }

    /// Share of the total spent in `stage`; zero when nothing was recorded.
    pub fn fraction(&self, stage: Stage) -> f64 {
        let total = self.total().as_secs_f64();
        if total == 0.0 {
            0.0
        } else {
            self.get(stage).as_secs_f64() / total
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueDepths {
    pub idle: usize,
    pub outstanding: usize,
    pub running: usize,
}

/// Snapshot of pipeline counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineStats {
    pub allocations_total: u64,
    pub pool_hits: u64,
    pub submitted: u64,
    pub completed: u64,
    pub failed: u64,
    pub device_tasks: Vec<u64>,
    pub stage_time: StageTimes,
    /// Summed over devices: wall time with at least one task on the device.
    pub device_active: Duration,
    /// Device stage time divided by device active time. Values above 1 mean
    /// copies and compute overlapped.
    pub overlap_occupancy: f64,
    pub queues: QueueDepths,
    pub job_instances: usize,
}

#[derive(Debug, Default)]
pub(crate) struct StatsInner {
    pub submitted: u64,
    pub completed: u64,
    pub failed: u64,
    pub device_tasks: Vec<u64>,
    pub stage_time: StageTimes,
    pub device_active: Duration,
}

impl StatsInner {
    pub fn new(devices: usize) -> Self {
        StatsInner { device_tasks: vec![0; devices], ..StatsInner::default() }
    }

    pub fn occupancy(&self) -> f64 {
        let active = self.device_active.as_secs_f64();
        if active == 0.0 {
            return 0.0;
        }
        let busy = self.stage_time.copy_in + self.stage_time.compute + self.stage_time.copy_out;
        busy.as_secs_f64() / active
    }
}
