//! Seed derivation so that one global seed fans out into independent,
//! reproducible streams per stage, layer and concept.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix a base seed with a label (SplitMix64 over the label bytes).
pub fn derive(base: u64, label: &str) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for byte in label.bytes() {
        state = splitmix(state ^ u64::from(byte));
    }
    splitmix(state)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
