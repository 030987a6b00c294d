//! Seeded random streams.
//!
//! Every consumer derives its generator from a `(seed, stream)` pair on a
//! ChaCha keystream, so replicate `i` draws the same numbers no matter how
//! many replicates run or in which thread it is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for substream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Named streams keep unrelated consumers of one seed apart.
pub fn named(seed: u64, name: &str) -> StreamRng {
    // FNV-1a over the name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    stream(seed ^ h, 0)
}
