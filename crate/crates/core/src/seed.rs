//! Seed derivation. Every random stream is a pure function of
//! (base seed, stream tag, chunk index), so results do not depend on how
//! chunks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_ALTERNATIVE: u64 = 0x616c_7465_726e;
pub const STREAM_NULL: u64 = 0x6e75_6c6c;
pub const STREAM_DGP: u64 = 0x6467_70;
pub const STREAM_ASSIGN: u64 = 0x6173_7367;
pub const STREAM_PERMUTE: u64 = 0x7065_726d;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ splitmix64(index.wrapping_add(0x5851_f42d)))
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}

/// FNV-1a, used to hash grid coordinates into a stable seed offset.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
