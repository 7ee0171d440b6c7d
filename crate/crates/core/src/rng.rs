//! Deterministic RNG streams keyed by tuples such as `(seed, step, example)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for every distinct key tuple.
pub fn keyed_rng(keys: &[u64]) -> ChaCha8Rng {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &k in keys {
        h = splitmix(h ^ splitmix(k));
    }
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix(h.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
