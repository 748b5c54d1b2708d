//! Counter-based seeding. Sample `i` of a stream keyed by `seed` always comes
//! from the same generator state, so results do not depend on how the index
//! range is split across workers.

use rand_pcg::Pcg64Mcg;

pub type SampleRng = Pcg64Mcg;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for sample `index` of the stream `seed`.
#[inline]
pub fn sample_rng(seed: u64, index: u64) -> SampleRng {
    let hi = splitmix64(seed ^ splitmix64(index));
    let lo = splitmix64(hi ^ 0xD1B5_4A32_D192_ED03);
    Pcg64Mcg::new(((hi as u128) << 64) | lo as u128)
}

/// Child seed for step `t` of a procedure seeded with `seed`.
pub fn derive_seed(seed: u64, t: u64) -> u64 {
    splitmix64(splitmix64(seed).wrapping_add(t.wrapping_mul(0xA076_1D64_78BD_642F)))
}

/// Uniform draw on [0, 1) from the top 53 bits of a word.
#[inline]
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
