use std::collections::HashSet;

use super::blockmap::BlockMap;
use crate::chunker::Chunk;
use crate::hashcore::Digest;

/// How much of a new version was already present in the previous one.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimilarityReport {
    pub total_blocks: u64,
    pub matched_blocks: u64,
    pub total_bytes: u64,
    pub new_bytes: u64,
    pub matched_bytes: u64,
    /// `matched_bytes / total_bytes`, zero for an empty version.
    pub similarity_ratio: f64,
}

impl SimilarityReport {
    pub(crate) fn tally<'a>(previous: &HashSet<Digest>, blocks: impl IntoIterator<Item = (&'a Digest, u64)>) -> Self {
        let mut r = SimilarityReport::default();
        for (digest, len) in blocks {
            r.total_blocks += 1;
            r.total_bytes += len;
            if previous.contains(digest) {
                r.matched_blocks += 1;
                r.matched_bytes += len;
            } else {
                r.new_bytes += len;
            }
        }
        r.similarity_ratio = if r.total_bytes == 0 { 0.0 } else { r.matched_bytes as f64 / r.total_bytes as f64 };
        r
    }
}

/// Matches chunks against the previous version's digests as a set; block
/// positions are ignored.
pub fn similarity(previous: &BlockMap, chunks: &[Chunk]) -> SimilarityReport {
    let known: HashSet<Digest> = previous.blocks.iter().map(|b| b.digest).collect();
    SimilarityReport::tally(&known, chunks.iter().map(|c| (&c.digest, c.length as u64)))
}

/// Similarity between two chunk lists of consecutive versions.
pub fn chunk_similarity(previous: &[Chunk], current: &[Chunk]) -> SimilarityReport {
    let known: HashSet<Digest> = previous.iter().map(|c| c.digest).collect();
    SimilarityReport::tally(&known, current.iter().map(|c| (&c.digest, c.length as u64)))
}
