use std::sync::Arc;

use parking_lot::{Condvar, Mutex};

use super::pool::BufferHandle;
use crate::error::{Error, Result};
use crate::hashcore::{Digest, SegmentedHashParams, WindowHashParams};

pub type TaskId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    DirectHashBatch,
    WindowHashBatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TaskParams {
    /// Direct-hash each consecutive span of the input; lengths sum to the
    /// used length of the buffer.
    Direct { params: SegmentedHashParams, spans: Vec<usize> },
    /// Hash every window of the input and flag boundaries.
    Window { params: WindowHashParams },
}

impl TaskParams {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskParams::Direct { .. } => TaskKind::DirectHashBatch,
            TaskParams::Window { .. } => TaskKind::WindowHashBatch,
        }
    }

    pub(crate) fn validate(&self, input_len: usize) -> Result<()> {
        if input_len == 0 {
            return Err(Error::config("task input must be non-empty"));
        }
        match self {
            TaskParams::Direct { params, spans } => {
                params.validate()?;
                if spans.is_empty() || spans.contains(&0) {
                    return Err(Error::config("direct-hash spans must be non-empty"));
                }
                let total: usize = spans.iter().sum();
                if total != input_len {
                    return Err(Error::config(format!(
                        "direct-hash spans cover {total} bytes but the input holds {input_len}"
                    )));
                }
                Ok(())
            }
            TaskParams::Window { params } => params.validate(),
        }
    }
}

/// A unit of accelerator work: a staged input buffer plus what to compute.
#[derive(Debug)]
pub struct Task {
    pub input: BufferHandle,
    pub params: TaskParams,
}

impl Task {
    /// Direct hash of the whole input as one block.
    pub fn direct(input: BufferHandle, params: SegmentedHashParams) -> Self {
        let spans = vec![input.used()];
        Task { input, params: TaskParams::Direct { params, spans } }
    }

    pub fn direct_batch(input: BufferHandle, params: SegmentedHashParams, spans: Vec<usize>) -> Self {
        Task { input, params: TaskParams::Direct { params, spans } }
    }

    pub fn window(input: BufferHandle, params: WindowHashParams) -> Self {
        Task { input, params: TaskParams::Window { params } }
    }

    pub fn kind(&self) -> TaskKind {
        self.params.kind()
    }
}

/// One hashed window and whether it is a chunk boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowEval {
    pub offset: u64,
    pub digest: Digest,
    pub boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskOutput {
    Digests(Vec<Digest>),
    Windows(Vec<WindowEval>),
}

impl TaskOutput {
    pub fn digests(&self) -> Option<&[Digest]> {
        match self {
            TaskOutput::Digests(d) => Some(d),
            TaskOutput::Windows(_) => None,
        }
    }

    pub fn windows(&self) -> Option<&[WindowEval]> {
        match self {
            TaskOutput::Windows(w) => Some(w),
            TaskOutput::Digests(_) => None,
        }
    }
}

pub type TaskResult = std::result::Result<Arc<TaskOutput>, String>;

pub(crate) struct TicketState {
    result: Mutex<Option<TaskResult>>,
    done: Condvar,
}

impl TicketState {
    pub(crate) fn new() -> Arc<Self> {
        Arc::new(TicketState { result: Mutex::new(None), done: Condvar::new() })
    }

    pub(crate) fn resolve(&self, result: TaskResult) {
        let mut slot = self.result.lock();
        debug_assert!(slot.is_none(), "task resolved twice");
        *slot = Some(result);
        self.done.notify_all();
    }
}

/// Handle for waiting on a submitted task.
#[derive(Clone)]
pub struct Ticket {
    id: TaskId,
    state: Arc<TicketState>,
}

impl Ticket {
    pub(crate) fn new(id: TaskId, state: Arc<TicketState>) -> Self {
        Ticket { id, state }
    }

    pub fn id(&self) -> TaskId {
        self.id
    }

    /// Blocks until the task completes. Repeated waits return the same result.
    pub fn wait(&self) -> Result<Arc<TaskOutput>> {
        let mut slot = self.state.result.lock();
        while slot.is_none() {
            self.state.done.wait(&mut slot);
        }
        self.to_result(slot.as_ref().expect("resolved"))
    }

    pub fn try_result(&self) -> Option<Result<Arc<TaskOutput>>> {
        self.state.result.lock().as_ref().map(|r| self.to_result(r))
    }

    fn to_result(&self, r: &TaskResult) -> Result<Arc<TaskOutput>> {
        r.clone().map_err(|cause| Error::TaskFailed { id: self.id, cause })
    }
}

impl std::fmt::Debug for Ticket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ticket").field("id", &self.id).finish()
    }
}
