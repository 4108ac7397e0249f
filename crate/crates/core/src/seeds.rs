//! Seed derivation shared by every module that runs named rng streams.

/// Mixes a base seed with a purpose tag and an index (SplitMix64 finisher)
/// so derived streams are distinct and reproducible.
pub(crate) fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
