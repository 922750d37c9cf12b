//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from a
//! master seed and a purpose tag, so adding a consumer never perturbs the
//! draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags. Values are part of the reproducibility contract.
pub mod purpose {
    pub const ACTOR: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const RND_INIT: u64 = 3;
    pub const POSTERIOR_SAMPLE: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const INSTANCE: u64 = 6;
}

pub fn stream(seed: u64, purpose: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}
