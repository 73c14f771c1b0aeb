//! The one random generator used everywhere: init, dropout, shuffling, synthesis.

use rand::SeedableRng;

pub use rand_xoshiro::Xoshiro256PlusPlus as Rng64;

pub fn seeded(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}

/// Derives an independent stream for a numbered sub-task so parallel work
/// does not depend on scheduling order.
pub fn derive(seed: u64, stream: &[u64]) -> Rng64 {
    // splitmix64 over the stream coordinates
    let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &k in stream {
        s = s.wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        s ^= s >> 31;
        s = s.wrapping_mul(0x94D0_49BB_1331_11EB);
        s ^= s >> 29;
    }
    Rng64::seed_from_u64(s)
}
