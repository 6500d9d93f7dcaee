//! Seeded, splittable random streams.
//!
//! Every random draw in the crate goes through a ChaCha8 generator keyed by a
//! `(seed, stream)` pair. Distinct stream indices give disjoint sequences, so
//! trials or settings can be fanned out across workers and still reproduce
//! bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
