//! Named random sub-streams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ENV_GEN: &str = "env-gen";
pub const CANDIDATE_NONCE: &str = "candidate-nonce";

/// Independent generator for `name`; the same (seed, name) always yields the
/// same stream.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}
