//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by the master seed plus a tuple of
//! indices and a purpose tag, so streams never depend on scheduling order and
//! adding one kind of randomness never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Disorder = 1,
    Shots = 2,
    Readout = 3,
    Trajectories = 4,
    Chain = 5,
    Noise = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master`, `purpose` and `indices` into a 64-bit seed.
pub fn derive_seed(master: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut acc = splitmix64(master ^ 0x6D62_6C2D_7365_6564);
    acc = splitmix64(acc ^ (purpose as u64));
    for &i in indices {
        acc = splitmix64(acc ^ splitmix64(i.wrapping_add(0x1234_5678)));
    }
    acc
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
