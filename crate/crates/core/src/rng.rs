//! Seeded random streams.
//!
//! Each replicate owns a ChaCha8 stream keyed by `(master_seed, replicate)`;
//! streams never overlap, so replicates can run on any worker in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn replicate_stream(master_seed: u64, replicate: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}
