//! Deterministic random streams. One run seed fans out into independent
//! ChaCha streams keyed by purpose, so adding draws to one stage never shifts
//! another stage's sequence.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sample = 2,
    Augment = 3,
    ClassEmbed = 4,
    SchemeSubspace = 5,
    SchemeKmeans = 6,
    EvalKmeans = 7,
    DataMeans = 8,
    DataNoise = 9,
    SplitLabeled = 10,
    Permute = 11,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    substream_rng(seed, stream, 0, 0)
}

/// Stream further keyed by two indices (e.g. meta-class set and retry attempt).
pub fn substream_rng(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    debug_assert!(a < (1 << 32) && b < (1 << 24));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream as u64) | (a << 8) | (b << 40));
    rng
}
