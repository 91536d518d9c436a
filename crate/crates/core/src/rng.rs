//! Reproducible random streams.
//!
//! Every replica draws from its own ChaCha8 stream keyed by
//! `(master seed, stream id)`, so results do not depend on how replicas are
//! scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids at or above this offset are reserved for auxiliary runs
/// (mean estimation, verification) so they never collide with replica ids.
pub const AUX_STREAM_BASE: u64 = 1 << 48;

pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
