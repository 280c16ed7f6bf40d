//! Per-purpose seed derivation.
//!
//! Every random draw in a run flows from one master seed. A purpose label
//! (for example `"split"` or `"shuffle"`) and an optional index are mixed
//! into the master seed with FNV-1a followed by a SplitMix64 finalizer, so
//! the derived streams are stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PURPOSE_EVAL_USERS: &str = "eval-users";
pub const PURPOSE_PAIRS: &str = "pairs";
pub const PURPOSE_CANDIDATES: &str = "candidates";
pub const PURPOSE_INIT: &str = "init";
pub const PURPOSE_SHUFFLE: &str = "shuffle";
pub const PURPOSE_TRAIN_NEGATIVES: &str = "train-negatives";
pub const PURPOSE_DROPOUT: &str = "dropout";
pub const PURPOSE_ANCHORS: &str = "anchors";
pub const PURPOSE_GEOMETRY: &str = "geometry";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for `purpose` under `master`.
pub fn derive(master: u64, purpose: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(master ^ splitmix64(h))
}

/// Seed for the `index`-th stream of a derived seed (per user, per epoch, ...).
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
