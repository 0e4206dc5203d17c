//! Counter-based random streams.
//!
//! Every stochastic choice draws from a ChaCha stream whose seed is a hash of a
//! base seed and a tuple of counters (episode, step, ...). Streams are therefore
//! independent of evaluation order, which makes generation parallelizable and lets
//! a learner run be resumed mid-sequence with the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain separators so different consumers never share a stream.
pub mod domain {
    pub const ENV_BASE: u64 = 0x656e_765f_6261_7365;
    pub const ENV_FEASIBILITY: u64 = 0x656e_765f_6665_6173;
    pub const TRAJECTORY: u64 = 0x7472_616a_6563_7479;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash `(seed, keys..)` into a 32-byte ChaCha seed.
pub fn keyed_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &k in keys {
        state = splitmix64(state ^ splitmix64(k));
    }
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        state = splitmix64(state.wrapping_add(i as u64));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Inverse-CDF draw from a probability row given `u` in `[0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum; take the last
    // index with positive mass.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_keys_same_stream() {
        let a: Vec<u64> = keyed_rng(7, &[1, 2]).random_iter().take(4).collect();
        let b: Vec<u64> = keyed_rng(7, &[1, 2]).random_iter().take(4).collect();
        let c: Vec<u64> = keyed_rng(7, &[2, 1]).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_index_respects_zero_mass() {
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(sample_index(&[0.5, 0.5, 0.0], 0.999_999_999_999_999_9), 1);
        assert_eq!(sample_index(&[0.25, 0.75], 0.2), 0);
    }
}
