//! Counter-based seeding. Every random quantity in a study is drawn from a
//! stream keyed on its coordinates, so results do not depend on execution
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Latent = 1,
    Combo = 2,
    Decision = 3,
    Final = 4,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A ChaCha8 generator keyed on (seed, domain, coordinates).
pub fn stream(seed: u64, domain: Domain, coords: [u64; 3]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = splitmix(seed ^ splitmix(domain as u64));
    let words = [
        h,
        {
            h = splitmix(h ^ coords[0]);
            h
        },
        {
            h = splitmix(h ^ coords[1].rotate_left(21));
            h
        },
        {
            h = splitmix(h ^ coords[2].rotate_left(42));
            h
        },
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// 64-bit seed for a kernel call made at a given decision point.
pub fn decision_seed(seed: u64, replication: u64, clock: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(Domain::Decision as u64)) ^ splitmix(replication) ^ clock.rotate_left(32))
}
