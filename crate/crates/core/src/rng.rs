//! Counter-based random streams.
//!
//! Every random quantity in a simulation is drawn from a stream addressed by
//! a path of integers, e.g. `(master_seed, replication, draw)`. The stream is
//! a ChaCha generator whose key is a splitmix64 hash of the path, so a draw
//! depends only on its address and never on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream tags separating the purposes that share a replication seed.
pub mod tag {
    pub const DATA: u64 = 0x4441_5441;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const RN_SELECT: u64 = 0x524e_5345;
    pub const LN_SELECT: u64 = 0x4c4e_5345;
    pub const REPLICATION: u64 = 0x5245_504c;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Returns the generator addressed by `seed` followed by `path`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    for &p in path {
        // Fold each coordinate through a full mixing round so that paths
        // differing in any position produce unrelated keys.
        let mixed = splitmix64(&mut state);
        state = mixed ^ p.wrapping_mul(0xd6e8_feb8_6659_fd93);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Fills a vector with `len` standard normal variates.
pub fn normals<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}
