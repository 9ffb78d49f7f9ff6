//! Seed derivation.
//!
//! Every random stream in the workbench is a ChaCha8 generator seeded from a
//! `u64`. Child seeds are derived from a parent seed and a path of labels as
//! the first eight bytes (little endian) of
//! `SHA-256(parent_le_bytes || for each part: tag byte || part bytes)`,
//! so tasks executed in any order draw the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Label(&'a str),
    Index(u64),
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(s: &'a str) -> Self {
        SeedPart::Label(s)
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(i: usize) -> Self {
        SeedPart::Index(i as u64)
    }
}

impl From<u64> for SeedPart<'_> {
    fn from(i: u64) -> Self {
        SeedPart::Index(i)
    }
}

pub fn derive_seed(seed: u64, parts: &[SeedPart<'_>]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        match part {
            SeedPart::Label(s) => {
                hasher.update([0u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            SeedPart::Index(i) => {
                hasher.update([1u8]);
                hasher.update(i.to_le_bytes());
            }
        }
    }
    let out = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}

/// Shorthand for `derive_seed` with heterogeneous parts.
#[macro_export]
macro_rules! seed_of {
    ($seed:expr $(, $part:expr)* $(,)?) => {
        $crate::seeding::derive_seed($seed, &[$($crate::seeding::SeedPart::from($part)),*])
    };
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
