//! Every random stream is derived from one run seed plus a fixed label, so
//! subsystems never share or perturb each other's sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn fork_seed(seed: u64, label: &str) -> u64 {
    // splitmix64 finaliser so nearby seeds land far apart
    let mut z = seed ^ fnv1a(label);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fork(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(fork_seed(seed, label))
}
