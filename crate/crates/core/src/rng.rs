//! Seeded random streams.
//!
//! Everything stochastic draws from ChaCha20, a counter-based generator. A
//! `(seed, stream)` pair names an independent sequence, so the data of domain
//! `i` depends only on the seed and `i`, never on how many other domains are
//! generated or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// Well-known stream families. Each family owns a disjoint 2^40 block of
/// stream ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    TrainData = 1,
    TestData = 2,
    Init = 3,
    Training = 4,
    Split = 5,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | (index & ((1 << 40) - 1)));
    rng
}

/// Derives a child seed; used where one configured seed fans out into
/// several independent runs.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
