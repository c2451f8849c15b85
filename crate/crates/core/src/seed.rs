//! Seed derivation. Every random stream in the crate is a child of one
//! master seed, keyed by a path of labels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[&str]) -> u64 {
    let mut h = splitmix(master);
    for part in path {
        // FNV-1a over the label, folded into the running state.
        let mut f: u64 = 0xcbf2_9ce4_8422_2325;
        for b in part.bytes() {
            f ^= b as u64;
            f = f.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h = splitmix(h ^ f);
    }
    h
}

pub fn rng(master: u64, path: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}
