//! Reference implementations built on a separate MD5 crate.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0u8; len];
    rng.fill(&mut v[..]);
    v
}

pub fn md5(data: &[u8]) -> [u8; 16] {
    md5_oracle::compute(data).0
}

/// Segments hashed one by one, digests concatenated, hashed again.
pub fn ref_direct(data: &[u8], segment: usize) -> [u8; 16] {
    let mut concat = Vec::new();
    for seg in data.chunks(segment) {
        concat.extend_from_slice(&md5(seg));
    }
    md5(&concat)
}

pub fn ref_boundary(window: &[u8], bits: u32, target: u64) -> bool {
    let d = md5(window);
    let prefix = u64::from_le_bytes(d[..8].try_into().unwrap());
    prefix & ((1u64 << bits) - 1) == target
}

/// Content-defined cut points `(start, end)` written straight from the
/// definition: from each chunk start, skip to `min - w`, step by `stride`,
/// cut after the first boundary window, else at `max` or end of data.
pub fn ref_cdc(data: &[u8], w: usize, stride: usize, bits: u32, target: u64, min: usize, max: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < data.len() {
        let limit = (start + max).min(data.len());
        let mut end = limit;
        let mut i = start + min.saturating_sub(w);
        while i + w <= limit {
            if ref_boundary(&data[i..i + w], bits, target) {
                end = i + w;
                break;
            }
            i += stride;
        }
        out.push((start, end));
        start = end;
    }
    out
}
