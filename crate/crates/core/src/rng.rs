//! Seeded random streams.
//!
//! Every stochastic path uses `Xoshiro256PlusPlus`, seeded through its
//! SplitMix64 `seed_from_u64`. Independent streams (per pixel, per
//! trajectory) are derived from a master seed with [`derive_seed`], so the
//! sequence a pixel sees never depends on evaluation order or thread count.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type QdmRng = Xoshiro256PlusPlus;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng_from_seed(seed: u64) -> QdmRng {
    QdmRng::seed_from_u64(seed)
}

/// Stream for pixel `(ix, iy)` under `master`; `stream` separates uses
/// (record simulation, acquisition noise) within a pixel.
pub fn pixel_rng(master: u64, ix: usize, iy: usize, stream: u64) -> QdmRng {
    rng_from_seed(derive_seed(master, &[ix as u64, iy as u64, stream]))
}
