//! Seed derivation.
//!
//! Every stochastic step (init, sampling, dropout, shuffling) draws from its
//! own ChaCha stream derived from a root seed and a path of labels, so runs
//! are reproducible regardless of the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A node in a tree of derived seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(splitmix64(seed))
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    /// Derive an independent child stream.
    pub fn child(self, id: u64) -> Self {
        SeedStream(splitmix64(
            self.0 ^ splitmix64(id.wrapping_add(0x5851_F42D_4C95_7F2D)),
        ))
    }

    pub fn child_str(self, label: &str) -> Self {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
