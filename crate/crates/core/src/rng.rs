//! Deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Streams below this index are reserved for whole-run generators.
const PER_SAMPLE_STREAM_BASE: u64 = 1 << 32;

/// RNG for one sample, independent of evaluation order and thread count.
pub fn sample_stream(seed: u64, sample_id: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(PER_SAMPLE_STREAM_BASE + sample_id as u64);
    rng
}

/// RNG for a named whole-run purpose (`stream` < 2³²).
pub fn run_stream(seed: u64, stream: u64) -> ChaCha20Rng {
    debug_assert!(stream < PER_SAMPLE_STREAM_BASE);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
