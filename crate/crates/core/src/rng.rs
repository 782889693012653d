//! Seeded random streams.
//!
//! Every consumer derives its generator from a `(seed, stream)` pair. The
//! generator is ChaCha8 in counter mode: the 64-bit seed becomes the key and
//! `stream` selects an independent 2^64-block sequence, so a chunk of work
//! keyed by its index yields the same numbers no matter which thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand::Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
