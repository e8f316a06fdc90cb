//! Seeded randomness.
//!
//! Every stochastic choice in the workspace flows through a ChaCha stream
//! seeded from an explicit u64, so identical seeds reproduce identical runs
//! bit for bit. Sub-streams are derived by hashing a label into the master
//! seed, which keeps independent pipeline pieces decoupled from each other's
//! draw counts.

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over the label, folded into the master seed and finished with a
/// splitmix round.
pub fn subseed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(master ^ h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// Standard normal via rand_distr-free Box-Muller (keeps the dependency
/// surface small and the draw sequence explicit).
pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn shuffled<T: Clone>(items: &[T], rng: &mut SeededRng) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(rng);
    v
}

/// Sample k distinct indices out of 0..n (k <= n).
pub fn sample_indices(n: usize, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx
}

pub fn gen_bool(rng: &mut SeededRng, p: f64) -> bool {
    rand::distributions::Bernoulli::new(p)
        .expect("probability in [0, 1]")
        .sample(rng)
}
