//! Seed streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded from
//! a 64-bit substream seed. Substream seeds are derived from a master seed,
//! a purpose label and an index:
//!
//! ```text
//! sub = splitmix64(splitmix64(master ^ fnv1a64(label)) ^ index)
//! ```
//!
//! so two purposes never share a stream and adding a new purpose does not
//! perturb existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed(&self, label: &str, index: u64) -> u64 {
        splitmix64(splitmix64(self.master ^ fnv1a64(label)) ^ index)
    }

    pub fn rng(&self, label: &str, index: u64) -> Rng {
        Rng::seed_from_u64(self.seed(label, index))
    }

    /// A child stream, for handing a component its own namespace.
    pub fn child(&self, label: &str, index: u64) -> SeedStream {
        SeedStream::new(self.seed(label, index))
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
