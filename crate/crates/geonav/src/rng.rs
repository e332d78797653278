//! Seeding discipline: all randomness flows from one root seed through named
//! substreams, so any stage of a run can be reproduced in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used to fold substream labels into the root seed. Stable by
/// construction (unlike `DefaultHasher`), so derived seeds survive toolchain
/// upgrades.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a root seed and a human-readable label such as
/// `"train/A/seed3/noise"`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a64(label.as_bytes()))
}

/// The RNG used everywhere in this crate.
pub type Rng = ChaCha8Rng;

pub fn rng_from(root: u64, label: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}

/// Serializable RNG state for resumable runs. The 128-bit word position is
/// split into two u64 halves so plain config formats can hold it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngSnapshot {
    pub fn capture(rng: &Rng) -> Self {
        let pos = rng.get_word_pos();
        RngSnapshot {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        rng
    }
}
