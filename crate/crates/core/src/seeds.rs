//! Deterministic derivation of per-repetition seeds.

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `seed`. Streams are independent of each other
/// and of evaluation order, so repetitions can run in any order or in parallel.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn child_seeds_are_distinct() {
        let seeds: HashSet<u64> = (0..10_000).map(|r| child_seed(7, r)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
        assert_eq!(child_seed(3, 4), child_seed(3, 4));
    }
}
