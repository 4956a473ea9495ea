//! Content-addressable block storage with a batched hashing pipeline.
//!
//! * [`hashcore`]: digests, segmented direct hashing, window hashing.
//! * [`chunker`]: fixed-size and content-defined chunking over streams.
//! * [`accelerant`]: job queues, pooled staging buffers and device managers
//!   that run hashing tasks with copy/compute overlap.
//! * [`castore`]: block-maps, write sessions, commit and read.
//! * [`netstore`]: wire format, metadata manager, storage nodes and clients.

pub mod accelerant;
pub mod castore;
pub mod chunker;
pub mod error;
pub mod hashcore;
pub mod netstore;

pub use error::{Error, Result};
