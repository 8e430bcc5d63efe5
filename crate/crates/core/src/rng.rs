use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) type Rng = ChaCha8Rng;

/// SplitMix64 finalizer; spreads structured (seed, index) inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for a path of indices under a base seed.
pub(crate) fn derive(seed: u64, path: &[u64]) -> Rng {
    let mut s = mix(seed);
    for &p in path {
        s = mix(s ^ mix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    Rng::seed_from_u64(s)
}
