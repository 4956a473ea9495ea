//! Size-classed staging buffer pool.
//!
//! Buffers are grouped into power-of-two size classes. With reuse enabled a
//! class holds at most `depth` live buffers: released buffers go back to the
//! class free list and an acquire that finds the class exhausted blocks until
//! one is released. With reuse disabled every acquire allocates and every
//! release frees.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};

static NEXT_POOL_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolConfig {
    /// Live buffers per size class.
    pub depth: usize,
    pub reuse: bool,
    pub min_class: usize,
    pub max_class: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { depth: 4, reuse: true, min_class: 4 * 1024, max_class: 64 * 1024 * 1024 }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("pool depth must be >= 1"));
        }
        if self.min_class == 0 || self.min_class > self.max_class {
            return Err(Error::config("pool size classes must satisfy 0 < min <= max"));
        }
        Ok(())
    }
}

/// A staging buffer checked out of a [`BufferPool`].
///
/// Not `Clone`: at any instant the handle is owned by exactly one party.
pub struct BufferHandle {
    pool_id: u64,
    id: u64,
    class: usize,
    fresh: bool,
    data: Vec<u8>,
    used: usize,
}

impl BufferHandle {
    pub fn capacity(&self) -> usize {
        self.data.len()
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Identifies the pool the handle was issued by.
    pub fn generation(&self) -> u64 {
        self.pool_id
    }

    /// True when serving this handle required a new allocation.
    pub fn was_allocated(&self) -> bool {
        self.fresh
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data[..self.used]
    }

    /// Replaces the contents with `bytes`.
    pub fn fill_from(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() > self.data.len() {
            return Err(Error::Capacity(format!(
                "{} bytes do not fit a {}-byte buffer",
                bytes.len(),
                self.data.len()
            )));
        }
        self.data[..bytes.len()].copy_from_slice(bytes);
        self.used = bytes.len();
        Ok(())
    }

    /// Writable view of the whole buffer; call [`set_used`](Self::set_used) after.
    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn set_used(&mut self, used: usize) -> Result<()> {
        if used > self.data.len() {
            return Err(Error::Capacity(format!("used {used} exceeds capacity {}", self.data.len())));
        }
        self.used = used;
        Ok(())
    }
}

impl std::fmt::Debug for BufferHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferHandle")
            .field("id", &self.id)
            .field("capacity", &self.data.len())
            .field("used", &self.used)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PoolCounters {
    pub allocations_total: u64,
    pub pool_hits: u64,
    pub releases: u64,
    pub checked_out: u64,
}

#[derive(Default)]
struct ClassState {
    free: Vec<Vec<u8>>,
    live: usize,
}

#[derive(Default)]
struct PoolState {
    classes: HashMap<usize, ClassState>,
    checked_out: HashSet<u64>,
    next_id: u64,
    counters: PoolCounters,
}

struct PoolInner {
    id: u64,
    config: PoolConfig,
    state: Mutex<PoolState>,
    released: Condvar,
}

#[derive(Clone)]
pub struct BufferPool {
    inner: Arc<PoolInner>,
}

impl BufferPool {
    pub fn new(config: PoolConfig) -> Result<Self> {
        config.validate()?;
        Ok(BufferPool {
            inner: Arc::new(PoolInner {
                id: NEXT_POOL_ID.fetch_add(1, Ordering::Relaxed),
                config,
                state: Mutex::new(PoolState::default()),
                released: Condvar::new(),
            }),
        })
    }

    pub fn config(&self) -> &PoolConfig {
        &self.inner.config
    }

    fn class_for(&self, size: usize) -> Result<usize> {
        let config = &self.inner.config;
        if size == 0 {
            return Err(Error::config("buffer size must be > 0"));
        }
        let class = size.max(config.min_class).next_power_of_two();
        if class > config.max_class {
            return Err(Error::BufferTooLarge { requested: size, max: config.max_class });
        }
        Ok(class)
    }

    /// Pre-allocates `count` buffers of the class serving `size`.
    pub fn warm(&self, size: usize, count: usize) -> Result<()> {
        let class = self.class_for(size)?;
        let mut state = self.inner.state.lock();
        let depth = self.inner.config.depth;
        let entry = state.classes.entry(class).or_default();
        let mut added = 0;
        while entry.live < depth && added < count {
            entry.free.push(vec![0u8; class]);
            entry.live += 1;
            added += 1;
        }
        state.counters.allocations_total += added as u64;
        Ok(())
    }

    /// Checks out a buffer of capacity >= `size`, blocking while the size
    /// class is exhausted.
    pub fn acquire(&self, size: usize) -> Result<BufferHandle> {
        self.acquire_inner(size, true).map(|h| h.expect("blocking acquire always yields"))
    }

    /// Like [`acquire`](Self::acquire) but returns `None` instead of blocking.
    pub fn try_acquire(&self, size: usize) -> Result<Option<BufferHandle>> {
        self.acquire_inner(size, false)
    }

    fn acquire_inner(&self, size: usize, block: bool) -> Result<Option<BufferHandle>> {
        let class = self.class_for(size)?;
        let config = self.inner.config;
        let mut state = self.inner.state.lock();
        let (data, fresh) = loop {
            if !config.reuse {
                break (None, true);
            }
            let entry = state.classes.entry(class).or_default();
            if let Some(buf) = entry.free.pop() {
                break (Some(buf), false);
            }
            if entry.live < config.depth {
                entry.live += 1;
                break (None, true);
            }
            if !block {
                return Ok(None);
            }
            self.inner.released.wait(&mut state);
        };
        let id = state.next_id;
        state.next_id += 1;
        state.checked_out.insert(id);
        if fresh {
            state.counters.allocations_total += 1;
        } else {
            state.counters.pool_hits += 1;
        }
        drop(state);
        // Fresh allocations happen outside the lock.
        let data = data.unwrap_or_else(|| vec![0u8; class]);
        Ok(Some(BufferHandle { pool_id: self.inner.id, id, class, fresh, data, used: 0 }))
    }

    /// Returns a handle to the pool.
    pub fn release(&self, handle: BufferHandle) -> Result<()> {
        if handle.pool_id != self.inner.id {
            return Err(Error::Ownership(format!(
                "buffer {} belongs to pool {}, not {}",
                handle.id, handle.pool_id, self.inner.id
            )));
        }
        let mut state = self.inner.state.lock();
        if !state.checked_out.remove(&handle.id) {
            return Err(Error::Ownership(format!("buffer {} is not checked out", handle.id)));
        }
        state.counters.releases += 1;
        if self.inner.config.reuse {
            let entry = state.classes.entry(handle.class).or_default();
            entry.free.push(handle.data);
        }
        drop(state);
        self.inner.released.notify_one();
        Ok(())
    }

    pub fn counters(&self) -> PoolCounters {
        let state = self.inner.state.lock();
        PoolCounters { checked_out: state.checked_out.len() as u64, ..state.counters }
    }

    /// Buffers sitting idle in the free lists.
    pub fn idle_buffers(&self) -> usize {
        self.inner.state.lock().classes.values().map(|c| c.free.len()).sum()
    }
}

impl std::fmt::Debug for BufferPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferPool").field("id", &self.inner.id).field("config", &self.inner.config).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;
    use std::time::Duration;

    fn pool(depth: usize, reuse: bool) -> BufferPool {
        BufferPool::new(PoolConfig { depth, reuse, ..PoolConfig::default() }).unwrap()
    }

    #[test]
    fn reacquire_hits_the_pool() {
        let pool = pool(2, true);
        let h = pool.acquire(1000).unwrap();
        assert!(h.capacity() >= 1000);
        assert!(h.was_allocated());
        pool.release(h).unwrap();
        let h = pool.acquire(1000).unwrap();
        assert!(!h.was_allocated());
        let c = pool.counters();
        assert_eq!((c.allocations_total, c.pool_hits), (1, 1));
        pool.release(h).unwrap();
    }

    #[test]
    fn warm_pool_serves_depth_without_allocating() {
        let pool = pool(4, true);
        pool.warm(64 * 1024, 4).unwrap();
        let before = pool.counters().allocations_total;
        let handles: Vec<_> = thread::scope(|s| {
            let joins: Vec<_> = (0..4).map(|_| s.spawn(|| pool.acquire(64 * 1024).unwrap())).collect();
            joins.into_iter().map(|j| j.join().unwrap()).collect()
        });
        assert_eq!(pool.counters().allocations_total, before);
        for h in handles {
            pool.release(h).unwrap();
        }
    }

    #[test]
    fn exhausted_class_blocks_until_release() {
        let pool = pool(1, true);
        let first = pool.acquire(10).unwrap();
        assert!(pool.try_acquire(10).unwrap().is_none());
        let p2 = pool.clone();
        let waiter = thread::spawn(move || p2.acquire(10).unwrap().id());
        thread::sleep(Duration::from_millis(20));
        pool.release(first).unwrap();
        waiter.join().unwrap();
        assert_eq!(pool.counters().allocations_total, 1);
    }

    #[test]
    fn no_reuse_allocates_every_time() {
        let pool = pool(1, false);
        let a = pool.acquire(10).unwrap();
        let b = pool.acquire(10).unwrap();
        pool.release(a).unwrap();
        pool.release(b).unwrap();
        assert_eq!(pool.counters().allocations_total, 2);
        assert_eq!(pool.idle_buffers(), 0);
    }

    #[test]
    fn foreign_handle_is_rejected() {
        let a = pool(1, true);
        let b = pool(1, true);
        let h = a.acquire(10).unwrap();
        assert!(matches!(b.release(h), Err(Error::Ownership(_))));
    }

    #[test]
    fn oversize_request_is_rejected() {
        let pool = BufferPool::new(PoolConfig { max_class: 1 << 20, ..PoolConfig::default() }).unwrap();
        assert!(matches!(pool.acquire((1 << 20) + 1), Err(Error::BufferTooLarge { .. })));
        assert!(pool.acquire(0).is_err());
    }

    #[test]
    fn fill_respects_capacity() {
        let pool = pool(1, true);
        let mut h = pool.acquire(4096).unwrap();
        h.fill_from(b"hello").unwrap();
        assert_eq!(h.as_slice(), b"hello");
        assert!(h.fill_from(&vec![0u8; h.capacity() + 1]).is_err());
        pool.release(h).unwrap();
    }
}
