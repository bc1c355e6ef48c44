//! Deterministic seed derivation.
//!
//! Experiments derive every per-trial seed from a single master seed and the
//! trial's indices, so changing one sweep dimension never perturbs the seeds
//! of unrelated trials. The mixing function is a fixed splitmix64 chain,
//! independent of platform and of any RNG crate internals.

/// Namespace tags keeping seed streams structurally disjoint.
pub mod ns {
    /// Per-video fingerprint synthesis.
    pub const LIBRARY: u64 = 0x4c49_4252;
    /// Calibration victims.
    pub const CAL_VICTIM: u64 = 0x4341_4c56;
    /// Noise applied to calibration victims.
    pub const CAL_NOISE: u64 = 0x4341_4c4e;
    /// Test victims.
    pub const TEST_VICTIM: u64 = 0x5445_5356;
    /// Noise applied to test victims.
    pub const TEST_NOISE: u64 = 0x5445_534e;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from `master` and an index path.
///
/// The derivation is index-addressed: `derive(m, &[ns, i, j])` depends only
/// on the values in the path, never on how many other paths exist.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &part in path {
        state = splitmix64(state ^ splitmix64(part));
    }
    state
}
