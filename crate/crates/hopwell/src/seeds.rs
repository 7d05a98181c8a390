//! Stage-scoped seed derivation.
//!
//! Every randomized stage (shuffling, weight init, dropout, k-means) draws
//! its seed from the experiment's master seed and a stage name, so changing
//! one stage's behavior in a sweep never perturbs the others.

/// Derives a child seed from a master seed and a stage name.
///
/// Pure function of its inputs: FNV-1a over the stage name, mixed with the
/// master seed through a SplitMix64 finalizer. Stable across platforms and
/// releases, which keeps checkpoints and reports reproducible.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in stage.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
