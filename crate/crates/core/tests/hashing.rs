mod common;

use chunkforge_core::hashcore::{
    base_hash, direct_hash, direct_hash_in, window_hashes, window_hashes_in, Algorithm, SegmentedHashParams,
    WindowHashParams, WorkerGroup,
};
use common::{md5, random_bytes, ref_boundary, ref_direct};
use proptest::prelude::*;

fn params(segment: usize) -> SegmentedHashParams {
    SegmentedHashParams::new(segment, Algorithm::Md5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn base_hash_matches_reference(data in prop::collection::vec(any::<u8>(), 0..4096)) {
        let got = base_hash(&data, Algorithm::Md5).unwrap();
        prop_assert_eq!(got.as_bytes(), &md5(&data)[..]);
    }

    #[test]
    fn direct_hash_matches_reference(len in 0usize..200_000, segment in 1usize..70_000, seed in any::<u64>()) {
        let data = random_bytes(len, seed);
        let got = direct_hash(&data, &params(segment)).unwrap();
        prop_assert_eq!(got.as_bytes(), &ref_direct(&data, segment)[..]);
    }

    #[test]
    fn window_hashes_match_reference(
        len in 0usize..3000,
        window in 1usize..64,
        stride in 1usize..20,
        bits in 0u32..6,
        seed in any::<u64>(),
    ) {
        let data = random_bytes(len, seed);
        let p = WindowHashParams { window, stride, boundary_bits: bits, ..WindowHashParams::default() };
        let got = window_hashes(&data, &p).unwrap();
        let offsets: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + window <= len).collect();
        prop_assert_eq!(got.len(), offsets.len());
        for (wh, &o) in got.iter().zip(&offsets) {
            prop_assert_eq!(wh.offset, o as u64);
            prop_assert_eq!(wh.digest.as_bytes(), &md5(&data[o..o + window])[..]);
            prop_assert_eq!(p.is_boundary(&wh.digest), ref_boundary(&data[o..o + window], bits, 0));
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let groups: Vec<WorkerGroup> =
        vec![WorkerGroup::sequential(), WorkerGroup::new(2).unwrap(), WorkerGroup::new(8).unwrap()];
    let wp = WindowHashParams { window: 32, stride: 3, ..WindowHashParams::default() };
    for seed in 0..20u64 {
        let data = random_bytes(1000 + seed as usize * 7919, seed);
        let segment = 1 + (seed as usize * 613) % 4096;
        let direct: Vec<_> = groups.iter().map(|g| direct_hash_in(g, &data, &params(segment)).unwrap()).collect();
        assert!(direct.windows(2).all(|p| p[0] == p[1]));
        let windows: Vec<_> = groups.iter().map(|g| window_hashes_in(g, &data, &wp).unwrap()).collect();
        assert!(windows.windows(2).all(|p| p[0] == p[1]));
    }
}

#[test]
fn boundary_frequency_is_two_to_minus_b() {
    let data = random_bytes(400_000, 99);
    for bits in [4u32, 8] {
        let p = WindowHashParams { window: 16, stride: 1, boundary_bits: bits, ..WindowHashParams::default() };
        let hashes = window_hashes(&data, &p).unwrap();
        let hits = hashes.iter().filter(|w| p.is_boundary(&w.digest)).count() as f64;
        let expected = hashes.len() as f64 / (1u64 << bits) as f64;
        // Five standard deviations of a binomial count.
        assert!((hits - expected).abs() < 5.0 * expected.sqrt(), "bits {bits}: {hits} vs {expected}");
    }
}

#[test]
fn bad_parameters_rejected() {
    assert!(SegmentedHashParams::new(0, Algorithm::Md5).is_err());
    assert!(base_hash(b"x", Algorithm::Opaque).is_err());
    let bad = WindowHashParams { boundary_bits: 4, boundary_target: 16, ..WindowHashParams::default() };
    assert!(window_hashes(b"0123456789", &bad).is_err());
}
