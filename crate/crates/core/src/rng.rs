//! Deterministic RNG construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a master seed with stream tags into an independent sub-seed (splitmix64).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut x = master;
    for &t in tags {
        x = splitmix(x ^ splitmix(t.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
