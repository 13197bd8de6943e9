//! Seed derivation. Every random draw in the crate is seeded from a master
//! seed mixed with the indices that identify it (scene, version, purpose).

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with `parts` in order. Distinct part lists give
/// statistically independent seeds; the mapping is stable across platforms.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Purpose tags used as the last derivation part.
pub mod stream {
    pub const PHANTOM: u64 = 1;
    pub const PROFILE: u64 = 2;
    pub const REGION: u64 = 3;
    pub const SPEC: u64 = 4;
    pub const TRAIN: u64 = 5;
}
