//! Named, reproducible random streams.
//!
//! Every consumer of randomness derives its generator from the run seed and a
//! stream name, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Generator for stream `name` under `seed`.
pub fn substream(seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}

/// Generator for the `index`-th member of stream `name` (epochs, row blocks).
pub fn substream_indexed(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(splitmix(seed ^ splitmix(index.wrapping_add(1))));
    rng.set_stream(fnv1a(name));
    rng
}
