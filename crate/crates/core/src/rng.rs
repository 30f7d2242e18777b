//! Seeding contract.
//!
//! Every random draw goes through a ChaCha8 stream selected by
//! `(seed, stream)`, so a replicate's output depends only on its index and
//! never on which worker thread ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

/// Generator for stream `stream` under master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a cell addressed by `path` (e.g. grid index, repeat index).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| {
        splitmix(acc ^ splitmix(p.wrapping_add(1)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream_rng(7, 3).random()).collect();
        let b: Vec<u64> = (0..4).map(|_| stream_rng(7, 3).random()).collect();
        assert_eq!(a, b);
        assert_ne!(
            stream_rng(7, 3).random::<u64>(),
            stream_rng(7, 4).random::<u64>()
        );
    }

    #[test]
    fn derived_seeds_depend_on_path() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
        assert_eq!(derive_seed(9, &[3, 5]), derive_seed(9, &[3, 5]));
    }
}
