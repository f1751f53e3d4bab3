//! Replayable random streams.
//!
//! Every simulated path owns a ChaCha8 stream whose key is the run seed and
//! whose 64-bit stream id is the path index. Draws within a path advance the
//! block counter, so a path can be regenerated in isolation from
//! `(seed, stream_index)` without touching any shared state. Nested
//! computations (inner Poisson solves, per-epsilon runs) get their own key via
//! [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, stream_index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_index);
    rng
}

/// Derive an independent key from a parent seed, a purpose label and an index.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = mix64(seed ^ 0x9E37_79B9_7F4A_7C15);
    h = mix64(h ^ fnv1a64(label.as_bytes()));
    mix64(h ^ index.wrapping_mul(0xD134_2543_DE82_EF95))
}

#[inline]
pub fn fill_normal(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
