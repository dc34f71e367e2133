//! Named, independent random streams derived from one master seed.
//!
//! Every consumer (environment dynamics, exploration, instance generation)
//! asks for its own stream by name. A stream is a ChaCha8 generator keyed by
//! `SHA-256(master || name)`, so the draws a component sees do not depend on
//! how many draws any other component made, or in which order runs execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    fn digest(&self, name: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        let out = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&out);
        seed
    }

    /// An independent generator for the consumer called `name`.
    pub fn stream(&self, name: &str) -> StreamRng {
        ChaCha8Rng::from_seed(self.digest(name))
    }

    /// A sub-tree, e.g. one per seed of a sweep.
    pub fn child(&self, name: &str) -> SeedTree {
        let d = self.digest(name);
        let mut b = [0u8; 8];
        b.copy_from_slice(&d[..8]);
        SeedTree::new(u64::from_le_bytes(b))
    }
}
