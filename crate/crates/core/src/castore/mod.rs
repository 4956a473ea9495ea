//! Content-addressed file store: block-maps, write sessions and reads.
//!
//! A write session buffers data, chunks it, names every chunk by its direct
//! hash and on commit uploads only the chunks the previous version of the
//! file does not already have.

mod blockmap;
mod similarity;
mod store;

pub use blockmap::{BlockMap, BlockRecord, FileId, MSBM_FORMAT, MSBM_MAGIC};
pub(crate) use blockmap::Reader;
pub use similarity::{chunk_similarity, similarity, SimilarityReport};
pub use store::{BlockService, CommitOutcome, HashEngine, MetadataService, Store, StoreConfig, WriteSession};
